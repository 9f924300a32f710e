"""Robustness in the fourth-order coefficient gamma.

A single backward Euler step with ``dt = T = 1`` is taken for decreasing
gamma.  The u error keeps its rate; Newton needs a few more iterations as
gamma shrinks.  Very small gamma triggers a near-singular pivot warning,
which is expected and harmless here.

Run with ``python3 demos/04_gamma_sweep.py`` (about half a minute).
"""
import warnings

from ultraweak.assembly import NearSingularWarning
from ultraweak.verify import run_gamma_sweep

warnings.simplefilter("ignore", NearSingularWarning)
entries = run_gamma_sweep("efk_ss_2d", k=0, n_list=(4, 8, 16), gammas=(1.0, 1e-2, 1e-4, 1e-6))
print(f"{'gamma':>8} {'e_u':>10} {'EOC u':>6} {'e_phi':>10} {'iters':>10} status")
for e in entries:
    last = e.report.rows[-1]
    print(f"{e.gamma:8.0e} {last.e_u:10.3e} {last.eoc_u:6.3f} {last.e_phi:10.3e} "
          f"{str(e.newton_iters):>10} {e.status}")
