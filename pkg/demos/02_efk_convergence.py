"""Extended Fisher-Kolmogorov: backward Euler in time, Newton per step.

The source is built so that ``u = t sin(pi x) sin(pi y)`` solves the
``gamma = 1`` problem.  We integrate to ``T = 0.1`` with ``dt = 0.01`` and
print the Newton history of the first steps, then a short error table.

Run with ``python3 demos/02_efk_convergence.py``.
"""
from ultraweak import ProblemConfig, make_case, run_efk, run_convergence_study

case = make_case("efk_ss_2d")
cfg = ProblemConfig(bc="ss", k=0, n=8, dt=0.01, t_final=0.1)


def show(i, state, stats):
    # Newton converges quadratically from the previous time level
    if i <= 3:
        res = ", ".join(f"{r:.1e}" for r in stats.residuals)
        print(f"step {i} t={state.t:.2f}: {stats.iterations} iterations [{res}]")


state, history, disc = run_efk(cfg, case.f, case.u0, on_step=show)
print(f"{len(history)} steps, max Newton iterations {max(s.iterations for s in history)}")
print(f"constraint residual at T: {disc.constraint_residual(state):.1e}")

print()
print(run_convergence_study(case, 0, [2, 4, 8, 16]).to_markdown())
