"""
CIR short rate (candidate solution)
===================================

For alpha < 0 the CIR kernel has a closed exponential-affine form. The
resulting controls are a candidate optimum: the outputs carry a flag.
"""

from hjmport.gfunction import GKernel, cir_kappa_tilde
from hjmport.models import UtilityParams, make_cir
from hjmport.oracle import feynman_kac_g, pde_residual_finite
from hjmport.simulate import SimConfig
from hjmport.strategy import optimal_target

spec = make_cir(beta=0.04, kappa=0.3, sigma=0.1, lambda_bar=0.2)
util = UtilityParams(alpha=-1.0, gamma=0.05, a=1.0, b=0.0, horizon=2.0)
print("Feller condition holds:", spec.feller_ok, "  kappa tilde:", cir_kappa_tilde(spec, util))

kernel = GKernel(spec, util, y_ref=[0.04])
for r in (0.01, 0.04, 0.08):
    gv = kernel.gvalue(0.0, [r])
    tg = optimal_target(spec, util, gv, 0.0, [r])
    print(f"r={r:.2f}  G={gv.value:.6f}  exposure={tg.vec[0]:+.5f}  candidate={gv.candidate}")

rep = feynman_kac_g(spec, util, 0.0, [0.04], SimConfig(n_paths=4000, dt=1 / 252, seed=8))
print(f"\nFeynman-Kac: {rep.oracle_value:.6f} +- {rep.diagnostics['stderr']:.1e} vs {rep.reference_value:.6f}")
res = pde_residual_finite(spec, util, kernel, 1.0, [0.04])
print(f"PDE residual {res.oracle_value:+.2e}, candidate={res.candidate}")
