"""
Infinite horizon: convergence and divergence
============================================

With mean reversion and enough impatience the kernel integral converges.
In the Merton model (no mean reversion) the integrated short rate has
variance growing like t^3/3 and even a bank-account policy has infinite
expected utility.
"""

import math

from hjmport.gfunction import DivergentKernel, check_condition_87, g_infinite
from hjmport.models import UtilityParams, make_merton, make_vasicek
from hjmport.oracle import divergence_demo
from hjmport.simulate import SimConfig

vasicek = make_vasicek(beta=0.05, kappa=0.2, sigma=0.01, lambda_=0.1)
for gamma in (0.2, 0.5):
    util = UtilityParams(alpha=0.5, gamma=gamma, a=1.0, horizon=math.inf)
    gv = g_infinite(vasicek, util, [0.03])
    rep = gv.convergence_report
    cond = check_condition_87(vasicek, util, radius_n=0.1)
    print(f"gamma={gamma}: G={gv.value:.6f} rate={rep.rate:+.4f} truncated at {rep.truncation:.0f} "
          f"(tail {rep.tail_bound:.1e}); dissipativity L2={cond.l2:.2f}, moment bound integrable={cond.integrable}")

try:
    g_infinite(make_merton(0.05, 0.01, 0.1), UtilityParams(0.5, 0.02, horizon=math.inf), [0.03])
except DivergentKernel as exc:
    print("\nMerton:", exc)

rep = divergence_demo(SimConfig(n_paths=10000, dt=1 / 52, seed=7))
print("\nbank account, c = 0.02, truncated rewards:")
for s, est, se, ex in zip(rep.horizons, rep.estimates, rep.stderrs, rep.analytic):
    print(f"  S={s:4.0f}  J={est:.6g} +- {se:.2g}  (exact {ex:.6g})")
print("log of the expected utility flow:", rep.exponent)
print(f"var(int_0^1 W) = {rep.int_w_variance:.4f} +- {rep.int_w_variance_stderr:.4f}, compare 1/3")
