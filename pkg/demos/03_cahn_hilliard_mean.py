"""Cahn-Hilliard boundary conditions and the zero-mean multiplier.

With zero normal flux on both RT fields the scalar ``u`` is only fixed up
to a constant.  The system is bordered with the mean functional and one
Lagrange multiplier, so it has one more unknown than the simply supported
one and the discrete solution has zero mean to round-off.

Run with ``python3 demos/03_cahn_hilliard_mean.py``.
"""
from ultraweak import ProblemConfig, make_case, run_efk

for bc in ("ss", "ch"):
    c = make_case(f"efk_{bc}_2d")
    cfg = ProblemConfig(bc=bc, k=1, n=4, dt=0.01, t_final=0.05)
    state, _, disc = run_efk(cfg, c.f, c.u0)
    print(f"{bc}: {disc.total_dofs} unknowns, multiplier {state.mu}")
    if bc == "ch":
        print(f"    mean of u_h at T: {disc.mean(state):.1e}")
        print(f"    constrained psi DoFs: {disc.system.constrained.size}")
