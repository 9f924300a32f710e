"""Command-line driver for convergence studies and gamma sweeps.

Examples
--------
Baseline study (EFK, simply supported, k = 0, n = 2 ... 64)::

    python -m ultraweak --out results

Second-order study with Cahn-Hilliard conditions::

    python -m ultraweak --case efk_ch_2d --k 1 --levels 2:64

Robustness sweep over the default gammas::

    python -m ultraweak --gamma-sweep default --levels 4:32 --dt 1 --t-final 1

Every run writes ``manifest.json`` next to its reports.  Exit codes: 0 ok,
2 configuration error, 3 solver failure, 4 built-in check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .assembly import CAHN_HILLIARD, NearSingularWarning, SingularSystemError
from .mesh import read_mesh
from .solvers import ConfigurationError, NewtonDivergence, ProblemConfig, normalize_bc
from .verify import (
    CASE_NAMES,
    DEFAULT_GAMMAS,
    ErrorReport,
    ErrorRow,
    SweepEntry,
    case_info,
    make_case,
    solve_level,
    sweep_status,
    sweep_summary_csv,
)

log = logging.getLogger("ultraweak")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CHECK = 4

CONSTRAINT_TOL = 1e-8
MEAN_TOL = 1e-10
# the multiplier error may degrade at the smallest gamma without failing the run
PHI_DEGRADATION_GAMMA = 1e-6

SWEEP_LEVELS = (4, 8, 16, 32)

_CASE_BY_BC = {"SIMPLY_SUPPORTED": "efk_ss_2d", CAHN_HILLIARD: "efk_ch_2d"}

_KEYS = ("case", "bc", "k", "levels", "gamma", "gamma-sweep", "dt", "t-final",
         "newton-tol", "out", "format", "dry-run", "mesh-file", "jobs")


@dataclass
class StudySpec:
    """What to run, beyond the per-solve :class:`ProblemConfig`."""

    mode: str = "convergence"
    levels: tuple = (2, 4, 8, 16, 32, 64)
    gammas: tuple = ()
    out: str = "results"
    format: str = "both"
    dry_run: bool = False
    mesh_file: str | None = None
    jobs: int = 1
    stationary: bool = False


@dataclass
class RunManifest:
    config: dict
    study: dict
    version: str
    timings: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    exit_code: int = EXIT_OK

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return str(v)


def _version() -> str:
    from . import __version__

    return __version__


# --------------------------------------------------------------------- parsing


def parse_levels(text: str) -> tuple:
    """``"a:b"`` -> powers of two from a to b; ``"4,8,16"`` is taken verbatim."""
    text = str(text).strip()
    try:
        if ":" in text:
            a, b = (int(t) for t in text.split(":"))
            if a < 1 or b < a:
                raise ValueError
            levels = []
            n = a
            while n <= b:
                levels.append(n)
                n *= 2
        else:
            levels = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigurationError(f"invalid --levels {text!r}; expected a:b or a comma list")
    if not levels or any(n < 1 or n & (n - 1) for n in levels):
        raise ConfigurationError(f"levels must be powers of two, got {text!r}")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigurationError("levels must be strictly increasing")
    return tuple(levels)


def parse_gammas(text: str) -> tuple:
    text = str(text).strip()
    if text.lower() == "default":
        return tuple(DEFAULT_GAMMAS)
    try:
        gammas = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigurationError(f"invalid --gamma-sweep {text!r}")
    if not gammas or any(not g > 0 for g in gammas):
        raise ConfigurationError("gamma values must be positive")
    return gammas


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; keys mirror the long flag names."""
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}")
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-").lstrip("-")
        if key not in _KEYS:
            raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off", ""):
        return False
    raise ConfigurationError(f"expected a boolean, got {v!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ultraweak",
        description="Convergence studies for the ultra-weak mixed biharmonic / EFK solver.",
    )
    p.add_argument("--config", help="flat key = value file; flags override its values")
    p.add_argument("--case", help=f"manufactured case, one of {', '.join(CASE_NAMES)}")
    p.add_argument("--bc", help="boundary conditions: ss or ch (clamped is refused)")
    p.add_argument("--k", help="polynomial degree, 0 or 1")
    p.add_argument("--levels", help="mesh levels a:b (powers of two) or a comma list")
    p.add_argument("--gamma", help="fourth-order coefficient (default 1)")
    p.add_argument("--gamma-sweep", help="comma list of gammas, or 'default'")
    p.add_argument("--dt", help="time step (default 0.01)")
    p.add_argument("--t-final", help="final time (default 0.1)")
    p.add_argument("--newton-tol", help="Newton residual tolerance (default 1e-10)")
    p.add_argument("--out", help="output directory (default results)")
    p.add_argument("--format", help="csv, md or both (default both)")
    p.add_argument("--dry-run", action="store_const", const="true",
                   help="resolve the configuration and write the manifest only")
    p.add_argument("--mesh-file", help="run a single level on this mesh file")
    p.add_argument("--jobs", help="worker processes for the study levels (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def parse_config(argv=None, parser=None):
    """Resolve defaults, config file and flags into ``(ProblemConfig, StudySpec)``.

    Raises ``ConfigurationError`` on unknown keys or invalid combinations.
    """
    parser = parser or build_parser()
    ns = parser.parse_args(argv)
    values = read_config_file(ns.config) if ns.config else {}
    for key in _KEYS:
        flag = getattr(ns, key.replace("-", "_"))
        if flag is not None:
            values[key] = flag

    def get(key, conv, default):
        if key not in values:
            return default
        try:
            return conv(values[key])
        except ConfigurationError:
            raise
        except (TypeError, ValueError):
            raise ConfigurationError(f"invalid value for {key}: {values[key]!r}")

    bc = normalize_bc(values["bc"]) if "bc" in values else None
    case = values.get("case")
    if case is None:
        case = _CASE_BY_BC[bc or "SIMPLY_SUPPORTED"]
    try:
        case_bc, stationary = case_info(case)
    except ValueError as exc:
        raise ConfigurationError(str(exc))
    if bc is not None and bc != case_bc:
        raise ConfigurationError(f"--bc {values['bc']} contradicts case {case!r} ({case_bc})")

    sweep = "gamma-sweep" in values
    # a sweep defaults to single-step runs, T = dt = 1, on n = 4 ... 32
    k = get("k", int, 0)
    gamma = get("gamma", float, 1.0)
    dt = get("dt", float, 1.0 if sweep else 0.01)
    t_final = get("t-final", float, 1.0 if sweep else 0.1)
    config = ProblemConfig(
        bc=case_bc, k=k, gamma=gamma,
        dt=math.inf if stationary else dt,
        t_final=0.0 if stationary else t_final,
        newton_tol=get("newton-tol", float, 1e-10), case=case,
    )
    if not stationary:
        config.num_steps  # validates t_final / dt

    spec = StudySpec(
        levels=get("levels", parse_levels, SWEEP_LEVELS if sweep else StudySpec.levels),
        out=get("out", str, StudySpec.out),
        format=get("format", str, StudySpec.format),
        dry_run=get("dry-run", _bool, False),
        mesh_file=values.get("mesh-file"),
        jobs=get("jobs", int, 1),
        stationary=stationary,
    )
    if spec.format not in ("csv", "md", "both"):
        raise ConfigurationError(f"--format must be csv, md or both, got {spec.format!r}")
    if spec.jobs < 1:
        raise ConfigurationError("--jobs must be positive")
    if sweep:
        if "gamma" in values:
            raise ConfigurationError("--gamma and --gamma-sweep are mutually exclusive")
        spec.mode = "sweep"
        spec.gammas = parse_gammas(values["gamma-sweep"])
    if spec.mesh_file is not None:
        if "levels" in values:
            raise ConfigurationError("--mesh-file and --levels are mutually exclusive")
        try:
            read_mesh(spec.mesh_file)
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"unusable mesh file {spec.mesh_file}: {exc}")
        spec.levels = ()
    config.n = spec.levels[0] if spec.levels else 1
    return config, spec


# ------------------------------------------------------------------- execution


def _level_job(case_name, gamma, k, n, dt, t_final, newton_tol, mesh_file):
    """Solve one level and evaluate the built-in checks (picklable for workers)."""
    case = make_case(case_name, gamma)
    mesh = read_mesh(mesh_file) if mesh_file else None
    tic = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NearSingularWarning)
        row, state, disc, stats = solve_level(case, k, n, dt, t_final, newton_tol, mesh=mesh)
    checks = {"constraint_residual": disc.constraint_residual(state)}
    near = [w for w in caught if issubclass(w.category, NearSingularWarning)]
    if near:
        checks["near_singular_warnings"] = len(near)
    if disc.system.m is not None:
        checks["mean"] = abs(disc.mean(state))
    timings = dict(disc.timings)
    timings["total"] = time.perf_counter() - tic
    return row, checks, timings


def _check_passes(checks: dict) -> bool:
    ok = checks["constraint_residual"] <= CONSTRAINT_TOL
    if "mean" in checks:
        ok = ok and checks["mean"] <= MEAN_TOL
    return ok


def _run_levels(config, spec, gamma, manifest, label):
    """Returns the report, or None after recording a solver failure."""
    ns = list(spec.levels) or [None]
    args = [(config.case, gamma, config.k, n, config.dt, config.t_final,
             config.newton_tol, spec.mesh_file) for n in ns]
    results = []
    try:
        if spec.jobs > 1 and len(ns) > 1:
            with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
                futures = [pool.submit(_level_job, *a) for a in args]
                for n, fut in zip(ns, futures):
                    results.append((n, *fut.result()))
        else:
            for n, a in zip(ns, args):
                results.append((n, *_level_job(*a)))
    except (NewtonDivergence, SingularSystemError) as exc:
        n = ns[len(results)]
        manifest.failures.append({"run": label, "level": n, "error": str(exc),
                                  "history": getattr(exc, "history", None)})
        log.error("%s: level n=%s failed: %s", label, n, exc)
        return None
    report = ErrorReport(config.case, config.k, gamma,
                         math.inf if spec.stationary else config.dt,
                         0.0 if spec.stationary else config.t_final)
    for n, row, checks, timings in results:
        report.add(ErrorRow(**{**asdict(row), "eoc_u": None, "eoc_sigma": None, "eoc_phi": None}))
        key = f"{label}/n={n if n is not None else 'mesh'}"
        manifest.checks[key] = {**checks, "passed": _check_passes(checks)}
        for phase, sec in timings.items():
            manifest.timings[phase] = manifest.timings.get(phase, 0.0) + sec
    return report


def _write_report(report: ErrorReport, stem: Path, fmt: str, manifest):
    if fmt in ("csv", "both"):
        report.to_csv(stem.with_suffix(".csv"))
        manifest.outputs.append(str(stem.with_suffix(".csv")))
    if fmt in ("md", "both"):
        report.to_markdown(stem.with_suffix(".md"))
        manifest.outputs.append(str(stem.with_suffix(".md")))


def cmd_convergence(config: ProblemConfig, spec: StudySpec, manifest: RunManifest) -> int:
    out = Path(spec.out)
    report = _run_levels(config, spec, config.gamma, manifest, "convergence")
    if report is None:
        return EXIT_SOLVER
    _write_report(report, out / f"convergence_{config.case}_k{config.k}", spec.format, manifest)
    if spec.format in ("md", "both"):
        print(report.to_markdown(), end="")
    return EXIT_OK if all(c["passed"] for c in manifest.checks.values()) else EXIT_CHECK


def cmd_gamma_sweep(config: ProblemConfig, spec: StudySpec, manifest: RunManifest) -> int:
    out = Path(spec.out)
    entries = []
    code = EXIT_OK
    for gam in sorted(spec.gammas, reverse=True):
        label = f"gamma={gam:.0e}"
        report = _run_levels(config, spec, gam, manifest, label)
        if report is None:
            entries.append(SweepEntry(gam, None, "failed", manifest.failures[-1]["error"]))
            code = EXIT_SOLVER
            continue
        status = sweep_status(report, config.k)
        entries.append(SweepEntry(gam, report, status))
        if status == "phi_degraded" and math.isclose(gam, PHI_DEGRADATION_GAMMA):
            log.warning("%s: multiplier error degraded (tolerated at this gamma)", label)
        elif status != "ok" and code == EXIT_OK:
            code = EXIT_CHECK
        _write_report(report, out / f"sweep_{config.case}_k{config.k}_gamma{gam:.0e}",
                      spec.format, manifest)
    summary = out / f"sweep_summary_{config.case}_k{config.k}.csv"
    text = sweep_summary_csv(entries, summary)
    manifest.outputs.append(str(summary))
    print(text, end="")
    if code == EXIT_OK and not all(c["passed"] for c in manifest.checks.values()):
        code = EXIT_CHECK
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = sys.argv[1:] if argv is None else list(argv)
    verbose = "-v" in args or "--verbose" in args
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config, spec = parse_config(args, parser)
    except ConfigurationError as exc:
        print(f"ultraweak: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(asdict(config), asdict(spec), _version())
    manifest_path = out / "manifest.json"
    if not spec.dry_run:
        tic = time.perf_counter()
        try:
            make_case(config.case, config.gamma).check()
            manifest.checks["manufactured_case"] = {"passed": True}
        except AssertionError as exc:
            manifest.checks["manufactured_case"] = {"passed": False, "error": str(exc)}
        if spec.mode == "sweep":
            code = cmd_gamma_sweep(config, spec, manifest)
        else:
            code = cmd_convergence(config, spec, manifest)
        manifest.timings["wall"] = time.perf_counter() - tic
        manifest.exit_code = code
    manifest.outputs.append(str(manifest_path))
    manifest.write(manifest_path)
    return manifest.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
