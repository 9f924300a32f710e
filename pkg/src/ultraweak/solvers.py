"""Stationary biharmonic solves and the backward Euler / Newton EFK integrator."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    CAHN_HILLIARD,
    SIMPLY_SUPPORTED,
    BlockSystem,
    assemble_block_system,
    assemble_load,
    assemble_nonlinear,
    factorize,
)
from .mesh import Mesh, build_unit_square_mesh
from .spaces import FESpace, build_dg_space, build_rt_space, project_l2

log = logging.getLogger(__name__)

CLAMPED = "CLAMPED"

_BC_ALIASES = {
    "ss": SIMPLY_SUPPORTED,
    "simply_supported": SIMPLY_SUPPORTED,
    "ch": CAHN_HILLIARD,
    "cahn_hilliard": CAHN_HILLIARD,
    "clamped": CLAMPED,
}


class ConfigurationError(ValueError):
    pass


class NewtonDivergence(RuntimeError):
    def __init__(self, message, history, step=None):
        super().__init__(message)
        self.history = list(history)
        self.step = step


def normalize_bc(bc: str) -> str:
    key = str(bc).strip().lower()
    if key in _BC_ALIASES:
        bc = _BC_ALIASES[key]
    if bc == CLAMPED:
        raise ConfigurationError(
            "formulation not well-posed for clamped BCs: with u = du/dn = 0 the "
            "multiplier space is all of H(div) and the inf-sup condition fails"
        )
    if bc not in (SIMPLY_SUPPORTED, CAHN_HILLIARD):
        raise ConfigurationError(f"unknown boundary condition {bc!r}")
    return bc


@dataclass
class ProblemConfig:
    bc: str = SIMPLY_SUPPORTED
    k: int = 0
    n: int = 2
    gamma: float = 1.0
    dt: float = 0.01
    t_final: float = 0.1
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    case: str = "efk_ss_2d"

    def __post_init__(self):
        self.bc = normalize_bc(self.bc)
        if self.k not in (0, 1):
            raise ConfigurationError(f"k must be 0 or 1, got {self.k!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigurationError(f"n must be a positive integer, got {self.n!r}")
        if not self.gamma > 0:
            raise ConfigurationError("gamma must be positive")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.t_final < 0:
            raise ConfigurationError("t_final must be non-negative")

    @property
    def num_steps(self) -> int:
        if np.isinf(self.dt):
            return 0
        steps = self.t_final / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps) or round(steps) < 1:
            raise ConfigurationError(
                f"t_final / dt must be a positive integer (got {self.t_final} / {self.dt})"
            )
        return int(round(steps))


@dataclass
class FieldState:
    u: np.ndarray
    sigma: np.ndarray
    phi: np.ndarray
    mu: float | None = None
    t: float = 0.0

    def vector(self) -> np.ndarray:
        parts = [self.u, self.sigma, self.phi]
        if self.mu is not None:
            parts.append([self.mu])
        return np.concatenate(parts)


@dataclass
class NewtonStats:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = False
    step: int | None = None
    t: float | None = None
    seconds: float = 0.0

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("nan")

    def quadratic_constant(self) -> float | None:
        """``r_{i+1} / r_i**2`` over the last two iterates (None if < 3 iterations)."""
        r = self.residuals
        if self.iterations < 3 or len(r) < 3 or r[-2] == 0:
            return None
        return r[-1] / r[-2] ** 2


@dataclass
class Discretization:
    mesh: Mesh
    space_u: FESpace
    space_sigma: FESpace
    space_phi: FESpace
    system: BlockSystem
    timings: dict = field(default_factory=dict)

    @classmethod
    def build(cls, mesh: Mesh, k: int, bc=SIMPLY_SUPPORTED, gamma=1.0, dt=np.inf):
        bc = normalize_bc(bc)
        tic = time.perf_counter()
        ch = bc == CAHN_HILLIARD
        U = build_dg_space(mesh, k)
        S = build_rt_space(mesh, k, zero_normal_trace=ch)
        P = build_rt_space(mesh, k, zero_normal_trace=ch)
        system = assemble_block_system(U, S, P, gamma=gamma, dt=dt, bc=bc)
        return cls(mesh, U, S, P, system, {"assembly": time.perf_counter() - tic})

    @property
    def total_dofs(self) -> int:
        """Unknown count including eliminated boundary DoFs and the multiplier."""
        return self.system.size

    def state(self, x, t) -> FieldState:
        u, s, p, mu = self.system.split(np.asarray(x, dtype=float))
        return FieldState(u.copy(), s.copy(), p.copy(), mu, t)

    def zero_state(self, t=0.0) -> FieldState:
        return self.state(np.zeros(self.total_dofs), t)

    def rhs(self, load) -> np.ndarray:
        b = np.zeros(self.total_dofs)
        b[: self.space_u.total_dofs] = load
        return b

    def constraint_residual(self, state: FieldState) -> float:
        """``|Bm sigma + Bd u|`` restricted to the unconstrained psi rows."""
        r = self.system.Bm @ state.sigma + self.system.Bd @ state.u
        r[self.system.constrained] = 0.0
        return float(np.linalg.norm(r))

    def mean(self, state: FieldState) -> float:
        from .assembly import assemble_mean_vector

        return float(assemble_mean_vector(self.space_u) @ state.u)


def _build_mesh(config: ProblemConfig, mesh: Mesh | None):
    return mesh if mesh is not None else build_unit_square_mesh(config.n)


# ------------------------------------------------------------------ biharmonic


def solve_biharmonic(config: ProblemConfig, f, mesh: Mesh | None = None, disc=None):
    """Solve the stationary three-field biharmonic problem with load ``f(x, y)``.

    Returns ``(FieldState, Discretization)``.
    """
    if disc is None:
        disc = Discretization.build(_build_mesh(config, mesh), config.k, config.bc)
    if not disc.system.stationary:
        raise ConfigurationError("solve_biharmonic needs a stationary discretisation")
    tic = time.perf_counter()
    fac = factorize(disc.system.matrix())
    disc.timings["factorisation"] = time.perf_counter() - tic
    b = disc.system.constrain_vector(disc.rhs(assemble_load(disc.space_u, f)))
    x = fac.solve(b)
    return disc.state(x, 0.0), disc


# ---------------------------------------------------------------------- newton


def newton_solve(residual_fn, jacobian_fn, x0, tol=1e-10, maxit=25, max_halvings=8):
    """Newton's method with step halving.

    ``jacobian_fn(x)`` returns a sparse matrix, which is factorised per
    iteration.  A step is accepted as soon as the residual norm decreases;
    after ``max_halvings`` failed halvings, or ``maxit`` iterations, a
    ``NewtonDivergence`` carrying the residual history is raised.
    """
    tic = time.perf_counter()
    x = np.array(x0, dtype=float)
    r = residual_fn(x)
    stats = NewtonStats(residuals=[float(np.linalg.norm(r))])
    while stats.residuals[-1] > tol:
        if stats.iterations >= maxit:
            stats.seconds = time.perf_counter() - tic
            raise NewtonDivergence(
                f"Newton did not converge in {maxit} iterations "
                f"(residual {stats.residuals[-1]:.3e})",
                stats.residuals,
            )
        dx = factorize(jacobian_fn(x)).solve(-r)
        lam, rn_norm = 1.0, np.inf
        for _ in range(max_halvings + 1):
            xn = x + lam * dx
            rn = residual_fn(xn)
            rn_norm = float(np.linalg.norm(rn))
            if rn_norm < stats.residuals[-1]:
                break
            lam *= 0.5
        else:
            stats.seconds = time.perf_counter() - tic
            raise NewtonDivergence(
                f"line search failed after {max_halvings} halvings "
                f"(residual {stats.residuals[-1]:.3e})",
                stats.residuals,
            )
        x, r = xn, rn
        stats.iterations += 1
        stats.residuals.append(rn_norm)
    stats.converged = True
    stats.seconds = time.perf_counter() - tic
    return x, stats


# ---------------------------------------------------------------- time stepping


def step_backward_euler(state: FieldState, disc: Discretization, f, dt=None,
                        tol=1e-10, maxit=25):
    """Advance one backward Euler step; ``f(x, y, t)`` is the source.

    Solves, for the unknowns at ``t + dt``, the gamma-scaled system

        Mu (u - u_n) / dt + N(u) + gamma Bd^T phi [+ mu m] = F(t + dt)
        (gamma A + C) sigma + gamma Bm^T phi              = 0
        gamma (Bd u + Bm sigma)                            = 0
        [m^T u                                             = 0]

    with Newton started from ``state``.
    """
    system = disc.system
    dt = system.dt if dt is None else dt
    if dt != system.dt:
        raise ConfigurationError("dt differs from the assembled system")
    t_new = state.t + dt
    nu = disc.space_u.total_dofs
    K0 = system.matrix()
    offset = disc.rhs(assemble_load(disc.space_u, f, t_new) + system.Mu @ state.u / dt)

    def residual(x):
        nl, _ = assemble_nonlinear(disc.space_u, x[:nu])
        r = K0 @ x - offset
        r[:nu] += nl
        return system.constrain_vector(r)

    def jacobian(x):
        _, jac = assemble_nonlinear(disc.space_u, x[:nu])
        return system.matrix(jac)

    x0 = system.constrain_vector(state.vector())
    x, stats = newton_solve(residual, jacobian, x0, tol=tol, maxit=maxit)
    stats.t = t_new
    return disc.state(x, t_new), stats


def initial_state(disc: Discretization, u0) -> FieldState:
    """``u_h(0) = P_h u0``; sigma and phi start from zero."""
    st = disc.zero_state(0.0)
    st.u = project_l2(disc.space_u, u0)
    if disc.system.m is not None:
        st.mu = 0.0
    return st


def run_efk(config: ProblemConfig, f, u0, mesh: Mesh | None = None, on_step=None):
    """Integrate the EFK problem over ``(0, t_final]`` with ``num_steps`` steps.

    ``f(x, y, t)`` is the source and ``u0(x, y)`` the initial datum.  Returns
    ``(final FieldState, [NewtonStats], Discretization)``.  ``on_step`` is
    called as ``on_step(step_index, state, stats)`` after every step.
    """
    steps = config.num_steps
    disc = Discretization.build(
        _build_mesh(config, mesh), config.k, config.bc, config.gamma, config.dt
    )
    state = initial_state(disc, u0)
    history = []
    newton_time = 0.0
    for i in range(1, steps + 1):
        try:
            state, stats = step_backward_euler(
                state, disc, f, tol=config.newton_tol, maxit=config.newton_max_iter
            )
        except NewtonDivergence as exc:
            exc.step = i
            raise NewtonDivergence(f"time step {i}: {exc}", exc.history, i) from exc
        state.t = stats.t = i * config.dt  # no drift from repeated addition
        stats.step = i
        newton_time += stats.seconds
        history.append(stats)
        log.debug("step %d t=%.4g newton its=%d res=%.2e", i, state.t, stats.iterations,
                  stats.final_residual)
        if on_step is not None:
            on_step(i, state, stats)
    disc.timings["newton"] = newton_time
    return state, history, disc
