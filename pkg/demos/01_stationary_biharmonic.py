"""Stationary biharmonic plate: solve, measure, refine.

The manufactured solution ``u = sin(pi x) sin(pi y)`` is simply supported
on the unit square.  Each refinement halves ``h``; the three fields should
converge at rate ``k + 1`` in their natural norms.

Run with ``python3 demos/01_stationary_biharmonic.py``.
"""
from ultraweak import ProblemConfig, build_unit_square_mesh, make_case, solve_biharmonic
from ultraweak.verify import compute_errors, run_convergence_study

case = make_case("biharmonic_ss_2d")

# A single solve on an 8 x 8 mesh.  The global unknown vector is [u | sigma | phi].
cfg = ProblemConfig(bc="ss", k=1, n=8, dt=float("inf"), t_final=0.0)
state, disc = solve_biharmonic(cfg, case.f_xy, mesh=build_unit_square_mesh(8))
e_u, e_s, e_p = compute_errors(case, disc, state)
print(f"n=8, k=1: {disc.total_dofs} unknowns")
print(f"  L2 error of u       {e_u:.3e}")
print(f"  H(div) error sigma  {e_s:.3e}")
print(f"  H(div) error phi    {e_p:.3e}")

# The same problem on a refinement sequence, for both polynomial degrees.
for k in (0, 1):
    report = run_convergence_study(case, k, [4, 8, 16])
    print()
    print(report.to_markdown())
