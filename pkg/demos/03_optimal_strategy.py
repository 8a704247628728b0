"""
Optimal rolling-bond portfolios
===============================

The optimal exposure is lambda/(1-alpha) (myopic) plus Sigma^T D_y G / G
(hedging). Any set of m + 1 maturities replicates it; with exactly m + 1
the weights are unique and match the closed forms.
"""

import numpy as np

from hjmport.gfunction import GKernel
from hjmport.models import UtilityParams, make_g2pp, make_vasicek
from hjmport.strategy import (build_f_matrix, exposure_operator, g2pp_three_asset, optimal_target, solve_strategy,
                              vasicek_two_asset)

util = UtilityParams(alpha=0.5, gamma=0.02, a=1.0, b=1.0, horizon=5.0)

# one factor: bank account plus a 5-year rolling bond
vasicek = make_vasicek(beta=0.05, kappa=0.2, sigma=0.01, lambda_=0.1)
kv = GKernel(vasicek, util)
for r in (0.0, 0.03, 0.06):
    gv = kv.gvalue(0.0, [r])
    tg = optimal_target(vasicek, util, gv, 0.0, [r])
    psi = solve_strategy(build_f_matrix(vasicek, 0.0, [r], [0.0, 5.0]), tg)
    closed = vasicek_two_asset(vasicek, util, gv, 5.0)
    print(f"r={r:.2f}  myopic={tg.risk_term[0]:+.4f} hedge={tg.hedge_term[0]:+.6f}  "
          f"weights bank/5y = {psi.weights.round(4)}  closed form = {closed.weights.round(4)}")

# two factors: bank, 2y and 10y
g2pp = make_g2pp(kappa1=0.1, kappa2=0.5, sigma1=0.01, sigma2=0.02, rho=-0.5, lambda1=0.1, lambda2=0.1)
kg = GKernel(g2pp, util)
y = np.array([0.01, 0.02])
gv = kg.gvalue(0.0, y)
tg = optimal_target(g2pp, util, gv, 0.0, y)
psi = solve_strategy(build_f_matrix(g2pp, 0.0, y, [0.0, 2.0, 10.0]), tg)
print("\nG2++ weights (bank, 2y, 10y):", psi.weights.round(4))
print("closed form:                 ", g2pp_three_asset(g2pp, util, gv, 2.0, 10.0).weights.round(4))
print("exposure error:", np.abs(exposure_operator(g2pp, psi, 0.0, y) - tg.vec).max())

# with more maturities the bond weights are the minimum-norm solution
psi4 = solve_strategy(build_f_matrix(g2pp, 0.0, y, [0.0, 1.0, 5.0, 10.0]), tg)
print("four maturities (minimum norm):", psi4.weights.round(4))
