"""Manufactured solutions, error norms, EOCs and convergence tables."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import sympy as sy

from .assembly import CAHN_HILLIARD, SIMPLY_SUPPORTED
from .mesh import Mesh, build_unit_square_mesh, mesh_size
from .solvers import (
    NewtonDivergence,
    ProblemConfig,
    solve_biharmonic,
    run_efk,
)
from .spaces import FESpace

log = logging.getLogger(__name__)

ERROR_DEGREE = 10
DEFAULT_GAMMAS = (1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)

_X, _Y, _T = sy.symbols("x y t", real=True)


@dataclass
class ManufacturedCase:
    """Closed-form data of one verification case.

    All closures take ``(x, y, t)``; vector closures return the two
    components stacked on the first axis.  For stationary cases ``t`` is
    ignored.
    """

    name: str
    bc: str
    gamma: float
    stationary: bool
    u: object
    sigma: object
    div_sigma: object
    phi: object
    div_phi: object
    f: object
    bilaplacian: object
    expressions: dict = field(default_factory=dict, repr=False)

    def u0(self, x, y):
        return self.u(x, y, 0.0)

    def f_xy(self, x, y):
        """Source as a function of space only (stationary use)."""
        return self.f(x, y, 0.0)

    def check(self, n_points=100, seed=0, fd_step=1e-6, tol=1e-5) -> dict:
        """Finite-difference consistency checks of the closures.

        Returns the max discrepancies; raises ``AssertionError`` on failure.
        """
        rng = np.random.default_rng(seed)
        x, y = rng.uniform(0.05, 0.95, (2, n_points))
        t = 0.0 if self.stationary else 0.1
        h = fd_step
        U = self.u
        gx = (U(x + h, y, t) - U(x - h, y, t)) / (2 * h)
        gy = (U(x, y + h, t) - U(x, y - h, t)) / (2 * h)
        sx, sy_ = self.sigma(x, y, t)
        scale = 1.0 + np.abs([sx, sy_]).max()
        grad_err = max(np.abs(gx - sx).max(), np.abs(gy - sy_).max()) / scale
        # Laplacian via fd of the analytic gradient
        d1 = (self.sigma(x + h, y, t)[0] - self.sigma(x - h, y, t)[0]) / (2 * h)
        d2 = (self.sigma(x, y + h, t)[1] - self.sigma(x, y - h, t)[1]) / (2 * h)
        lap = self.div_sigma(x, y, t)
        lap_err = np.abs(d1 + d2 - lap).max() / (1.0 + np.abs(lap).max())
        # source: f = d_t u + gamma lap^2 u - lap u + u^3 - u (EFK) / lap^2 u
        bil = self.bilaplacian(x, y, t)
        if self.stationary:
            src = bil
        else:
            ut = (U(x, y, t + h) - U(x, y, t - h)) / (2 * h)
            u = U(x, y, t)
            src = ut + self.gamma * bil - lap + u**3 - u
        f = self.f(x, y, t)
        src_err = np.abs(src - f).max() / (1.0 + np.abs(f).max())
        out = {"gradient": grad_err, "laplacian": lap_err, "source": src_err}
        assert grad_err < tol and lap_err < tol, f"{self.name}: derivative closures inconsistent {out}"
        assert src_err < 1e-8, f"{self.name}: source inconsistent {out}"
        return out


def _lambdify(expr):
    fn = sy.lambdify((_X, _Y, _T), expr, "numpy")

    def wrapped(x, y, t=0.0):
        val = fn(x, y, t)
        return np.broadcast_to(np.asarray(val, dtype=float), np.broadcast(x, y).shape) + 0.0

    return wrapped


def _lambdify_vec(ex, ey):
    fx, fy = _lambdify(ex), _lambdify(ey)

    def wrapped(x, y, t=0.0):
        return np.stack([fx(x, y, t), fy(x, y, t)])

    return wrapped


def case_from_expression(name, u_expr, bc, gamma=1.0, stationary=False) -> ManufacturedCase:
    """Derive all mixed variables and the source from a sympy expression ``u(x, y, t)``.

    Testing the flux equation with ``v = 0`` and integrating by parts gives
    ``phi = grad(lap u) - grad(u) / gamma`` for EFK problems and
    ``phi = grad(lap u)`` for the stationary biharmonic problem.
    """
    u = sy.sympify(u_expr)
    gam = sy.nsimplify(gamma) if not stationary else sy.Integer(1)
    sx, sy_ = sy.diff(u, _X), sy.diff(u, _Y)
    lap = sy.diff(sx, _X) + sy.diff(sy_, _Y)
    glx, gly = sy.diff(lap, _X), sy.diff(lap, _Y)
    bil = sy.diff(glx, _X) + sy.diff(gly, _Y)
    if stationary:
        px, py = glx, gly
        f = bil
    else:
        px, py = glx - sx / gam, gly - sy_ / gam
        f = sy.diff(u, _T) + gam * bil - lap + u**3 - u
    div_phi = sy.diff(px, _X) + sy.diff(py, _Y)
    exprs = {"u": u, "sigma": (sx, sy_), "div_sigma": lap, "phi": (px, py),
             "div_phi": div_phi, "f": f}
    return ManufacturedCase(
        name=name,
        bc=bc,
        gamma=float(gamma) if not stationary else 1.0,
        stationary=stationary,
        u=_lambdify(u),
        sigma=_lambdify_vec(sx, sy_),
        div_sigma=_lambdify(lap),
        phi=_lambdify_vec(px, py),
        div_phi=_lambdify(sy.simplify(div_phi)),
        f=_lambdify(sy.expand(f)),
        bilaplacian=_lambdify(bil),
        expressions=exprs,
    )


_PI = sy.pi
_CASES = {
    "efk_ss_2d": (_T * sy.sin(_PI * _X) * sy.sin(_PI * _Y), SIMPLY_SUPPORTED, False),
    "efk_ch_2d": (_T * sy.cos(_PI * _X) * sy.cos(_PI * _Y), CAHN_HILLIARD, False),
    "biharmonic_ss_2d": (sy.sin(_PI * _X) * sy.sin(_PI * _Y), SIMPLY_SUPPORTED, True),
    "biharmonic_ch_2d": (sy.cos(_PI * _X) * sy.cos(_PI * _Y), CAHN_HILLIARD, True),
    "efk_zero_2d": (sy.Integer(0) * _X, SIMPLY_SUPPORTED, False),
}

CASE_NAMES = tuple(_CASES)


def case_info(name: str) -> tuple[str, bool]:
    """``(boundary condition, stationary)`` of a named case, without sympy work."""
    if name not in _CASES:
        raise ValueError(f"unknown case {name!r}; available: {', '.join(_CASES)}")
    return _CASES[name][1], _CASES[name][2]


def make_case(name: str, gamma: float = 1.0) -> ManufacturedCase:
    if name not in _CASES:
        raise ValueError(f"unknown case {name!r}; available: {', '.join(_CASES)}")
    expr, bc, stationary = _CASES[name]
    return case_from_expression(name, expr, bc, gamma, stationary)


# ---------------------------------------------------------------------- errors


def error_l2_scalar(space: FESpace, coeffs, exact, t=0.0, degree=ERROR_DEGREE) -> float:
    rule, w, uh, _ = space.evaluate(coeffs, degree)
    pts = space.mesh.map_to_physical(rule.points)
    ue = exact(pts[..., 0], pts[..., 1], t)
    return float(np.sqrt(np.sum(w * (uh - ue) ** 2)))


def error_hdiv(space: FESpace, coeffs, exact, exact_div, t=0.0, degree=ERROR_DEGREE) -> float:
    """``sqrt(|tau_h - tau|_0^2 + |div tau_h - div tau|_0^2)``."""
    rule, w, vh, dh = space.evaluate(coeffs, degree)
    pts = space.mesh.map_to_physical(rule.points)
    x, y = pts[..., 0], pts[..., 1]
    ve = np.moveaxis(np.asarray(exact(x, y, t)), 0, -1)
    de = exact_div(x, y, t)
    e2 = np.sum(w * np.sum((vh - ve) ** 2, axis=-1)) + np.sum(w * (dh - de) ** 2)
    return float(np.sqrt(e2))


def eoc(e1, h1, e2, h2) -> float:
    """Experimental order of convergence between two refinement levels."""
    if min(e1, e2, h1, h2) <= 0:
        raise ValueError("eoc needs positive errors and mesh sizes")
    if not h2 < h1:
        raise ValueError("eoc needs h2 < h1")
    return math.log(e1 / e2) / math.log(h1 / h2)


# ---------------------------------------------------------------------- report

CSV_HEADER = ("case", "k", "gamma", "dt", "T", "dof", "h", "e_u", "eoc_u",
              "e_sigma", "eoc_sigma", "e_phi", "eoc_phi")


@dataclass
class ErrorRow:
    dof: int
    h: float
    e_u: float
    e_sigma: float
    e_phi: float
    eoc_u: float | None = None
    eoc_sigma: float | None = None
    eoc_phi: float | None = None
    newton_iters: list = field(default_factory=list)
    n: int | None = None


@dataclass
class ErrorReport:
    case: str
    k: int
    gamma: float
    dt: float
    T: float
    rows: list = field(default_factory=list)

    def add(self, row: ErrorRow):
        if self.rows:
            prev = self.rows[-1]
            for key in ("u", "sigma", "phi"):
                e1, e2 = getattr(prev, f"e_{key}"), getattr(row, f"e_{key}")
                val = eoc(e1, prev.h, e2, row.h) if e1 > 0 and e2 > 0 else None
                setattr(row, f"eoc_{key}", val)
        self.rows.append(row)

    def column(self, name):
        return [getattr(r, name) for r in self.rows]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([
                self.case, self.k, _fmt(self.gamma), _fmt(self.dt), _fmt(self.T),
                r.dof, f"{r.h:.6f}",
                _fmt(r.e_u), _fmt_eoc(r.eoc_u),
                _fmt(r.e_sigma), _fmt_eoc(r.eoc_sigma),
                _fmt(r.e_phi), _fmt_eoc(r.eoc_phi),
            ])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_markdown(self, path=None) -> str:
        lines = [
            f"**{self.case}**, k = {self.k}, gamma = {_fmt(self.gamma)}, "
            f"dt = {_fmt(self.dt)}, T = {_fmt(self.T)}",
            "",
            "| DoF | h | e(u) | EOC | e(sigma) | EOC | e(phi) | EOC |",
            "|---:|---:|---:|---:|---:|---:|---:|---:|",
        ]
        for r in self.rows:
            lines.append(
                f"| {r.dof} | {r.h:.4f} | {r.e_u:.2e} | {_star(r.eoc_u)} | "
                f"{r.e_sigma:.2e} | {_star(r.eoc_sigma)} | {r.e_phi:.2e} | {_star(r.eoc_phi)} |"
            )
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _fmt(v):
    return f"{v:.6e}" if np.isfinite(v) else "inf"


def _fmt_eoc(v):
    return "" if v is None else f"{v:.6f}"


def _star(v):
    return "★" if v is None else f"{v:.3f}"


# --------------------------------------------------------------------- studies


def compute_errors(case: ManufacturedCase, disc, state):
    t = state.t
    e_u = error_l2_scalar(disc.space_u, state.u, case.u, t)
    e_s = error_hdiv(disc.space_sigma, state.sigma, case.sigma, case.div_sigma, t)
    e_p = error_hdiv(disc.space_phi, state.phi, case.phi, case.div_phi, t)
    return e_u, e_s, e_p


def solve_level(case: ManufacturedCase, k, n=None, dt=0.01, t_final=0.1,
                newton_tol=1e-10, newton_max_iter=25, mesh: Mesh | None = None):
    """One refinement level. Returns ``(ErrorRow, state, disc, newton stats)``."""
    mesh = mesh if mesh is not None else build_unit_square_mesh(n)
    cfg = ProblemConfig(bc=case.bc, k=k, n=mesh.n or 1, gamma=case.gamma,
                        dt=np.inf if case.stationary else dt,
                        t_final=0.0 if case.stationary else t_final,
                        newton_tol=newton_tol, newton_max_iter=newton_max_iter,
                        case=case.name)
    if case.stationary:
        state, disc = solve_biharmonic(cfg, case.f_xy, mesh=mesh)
        stats = []
    else:
        state, stats, disc = run_efk(cfg, case.f, case.u0, mesh=mesh)
    e_u, e_s, e_p = compute_errors(case, disc, state)
    row = ErrorRow(disc.total_dofs, mesh_size(mesh), e_u, e_s, e_p,
                   newton_iters=[s.iterations for s in stats], n=mesh.n)
    return row, state, disc, stats


def run_convergence_study(case, k, n_list, dt=0.01, t_final=0.1, gamma=None,
                          newton_tol=1e-10, newton_max_iter=25) -> ErrorReport:
    """Solve on each ``n`` of ``n_list`` and tabulate the final-time errors."""
    if isinstance(case, str):
        case = make_case(case, 1.0 if gamma is None else gamma)
    elif gamma is not None and gamma != case.gamma:
        case = make_case(case.name, gamma)
    n_list = list(n_list)
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be strictly increasing")
    if any(n & (n - 1) for n in n_list):
        raise ValueError("n_list entries must be powers of two")
    case.check()
    report = ErrorReport(case.name, k, case.gamma,
                         math.inf if case.stationary else dt,
                         0.0 if case.stationary else t_final)
    for n in n_list:
        row, *_ = solve_level(case, k, n, dt, t_final, newton_tol, newton_max_iter)
        log.info("%s k=%d n=%d dof=%d e_u=%.3e e_s=%.3e e_p=%.3e", case.name, k, n,
                 row.dof, row.e_u, row.e_sigma, row.e_phi)
        report.add(row)
    return report


@dataclass
class SweepEntry:
    gamma: float
    report: ErrorReport | None
    status: str
    message: str = ""

    @property
    def newton_iters(self):
        if self.report is None:
            return []
        return [r.newton_iters[0] if r.newton_iters else None for r in self.report.rows]


def sweep_status(report: ErrorReport, k: int, slack: float = 0.1) -> str:
    """``"u_degraded"`` / ``"phi_degraded"`` when the finest-pair EOC drops
    below ``k + 1 - slack``, else ``"ok"``."""
    last = report.rows[-1] if report.rows else None
    if last is None or last.eoc_u is None:
        return "ok"
    if last.eoc_u < k + 1 - slack:
        return "u_degraded"
    if last.eoc_phi is None or last.eoc_phi < k + 1 - slack:
        return "phi_degraded"
    return "ok"


def run_gamma_sweep(case="efk_ss_2d", k=0, n_list=(4, 8, 16, 32), gammas=DEFAULT_GAMMAS,
                    dt=1.0, t_final=1.0, newton_tol=1e-10, newton_max_iter=25):
    """Single-step runs (default ``T = dt = 1``) for each gamma, largest first.

    Failures are recorded per gamma (status ``"failed"``) and the sweep
    continues.  A run whose multiplier error does not decrease at the
    expected rate is flagged ``"phi_degraded"``.
    """
    name = case if isinstance(case, str) else case.name
    out = []
    for gam in sorted(gammas, reverse=True):
        try:
            rep = run_convergence_study(make_case(name, gam), k, n_list, dt, t_final,
                                        newton_tol=newton_tol, newton_max_iter=newton_max_iter)
        except (NewtonDivergence, RuntimeError, ValueError) as exc:
            out.append(SweepEntry(gam, None, "failed", str(exc)))
            continue
        status = sweep_status(rep, k)
        out.append(SweepEntry(gam, rep, status))
    return out


SUMMARY_HEADER = ("gamma", "n", "e_u", "e_sigma", "e_phi", "newton_iters", "status")


def sweep_summary_csv(entries, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for en in sorted(entries, key=lambda e: -e.gamma):
        if en.report is None:
            w.writerow([_fmt(en.gamma), "", "", "", "", "", en.status])
            continue
        for r in en.report.rows:
            its = r.newton_iters[0] if r.newton_iters else ""
            w.writerow([_fmt(en.gamma), r.n, _fmt(r.e_u), _fmt(r.e_sigma), _fmt(r.e_phi),
                        its, en.status])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
