"""
Bond curves in the three desk models
====================================

Affine bond prices P(x, y) = exp(m(x) - <n(x), y>) for Vasicek, G2++ and
CIR, and the volatility of the rolling bond that keeps time to maturity x.
"""

import numpy as np

from hjmport.models import bond_m, bond_n, bond_price, make_cir, make_g2pp, make_merton, make_vasicek, rolling_bond_vol

vasicek = make_vasicek(beta=0.05, kappa=0.2, sigma=0.01, lambda_=0.1)
g2pp = make_g2pp(kappa1=0.1, kappa2=0.5, sigma1=0.01, sigma2=0.02, rho=-0.5, lambda1=0.1, lambda2=0.1)
cir = make_cir(beta=0.04, kappa=0.3, sigma=0.1, lambda_bar=0.2)

xs = np.array([0.0, 1.0, 2.0, 5.0, 10.0, 30.0])

# discount curves at today's state
print("   x   P_vasicek(r=3%)   P_g2pp(y=(1%,2%))   P_cir(r=4%)")
for x in xs:
    print(f"{x:5.1f}  {bond_price(vasicek, x, [0.03]):14.8f}  {bond_price(g2pp, x, [0.01, 0.02]):16.8f}"
          f"  {bond_price(cir, x, [0.04]):12.8f}")

# the rolling bond's volatility is -Sigma^T D_y log P = Sigma^T n(x); it saturates at sigma / kappa
print("\nrolling-bond volatility, Vasicek:", np.round(rolling_bond_vol(vasicek, xs)[:, 0], 6))
print("long-maturity bound sigma/kappa:", 0.01 / 0.2)

# kappa -> 0 recovers the Merton model, where m(x) = -beta x^2 / 2 + sigma^2 x^3 / 6
merton = make_merton(beta=0.05, sigma=0.01, lambda_=0.1)
near = make_vasicek(beta=0.05, kappa=1e-6, sigma=0.01, lambda_=0.1)
print("\n   x   m_merton        m_vasicek(kappa=1e-6)   n_merton   n_vasicek")
for x in xs[1:]:
    print(f"{x:5.1f}  {bond_m(merton, x):13.8f}  {bond_m(near, x):13.8f}  {bond_n(merton, x)[0]:9.5f}"
          f"  {bond_n(near, x)[0]:9.5f}")
