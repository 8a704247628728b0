"""
Simulating the optimal policy
=============================

Under the feedback policy the expected reward equals the value function;
simple constant policies do worse. All policies share random numbers.
"""

from hjmport.gfunction import GKernel
from hjmport.models import UtilityParams, make_vasicek
from hjmport.simulate import SimConfig, estimate_reward_finite
from hjmport.strategy import ConstantPolicy, OptimalPolicy, PortfolioMeasure

spec = make_vasicek(beta=0.05, kappa=0.2, sigma=0.01, lambda_=0.1)
util = UtilityParams(alpha=0.5, gamma=0.02, a=1.0, b=1.0, horizon=5.0)
y0, z0 = [0.03], 1.0
kernel = GKernel(spec, util, y_ref=y0)
V = kernel(0.0, y0) ** (1 - util.alpha) * z0 ** util.alpha / util.alpha
c_hat = 1.0 / kernel(0.0, y0)

config = SimConfig(n_paths=4000, dt=1 / 252, horizon=5.0, seed=42, store_paths=False)
policies = [OptimalPolicy(spec, util, maturities=[0.0, 5.0], kernel=kernel),
            ConstantPolicy(spec, PortfolioMeasure.dirac(0.0), 0.02),
            ConstantPolicy(spec, PortfolioMeasure.dirac(0.0), c_hat),
            ConstantPolicy(spec, PortfolioMeasure.dirac(5.0), 0.02)]

print(f"value function V = {V:.5f}")
for pol in policies:
    est = estimate_reward_finite(spec, util, pol, z0, y0, config)
    print(f"{pol.label:24s} J = {est.mean:.5f} +- {est.stderr:.5f}")
print(f"(initial optimal consumption rate {c_hat:.4f}; {config.n_steps} steps)")
