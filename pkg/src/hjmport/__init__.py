"""Optimal consumption and rolling-bond portfolios under affine term-structure models."""

from hjmport.gfunction import (DivergentKernel, GKernel, GValue, asymptotic_rate, check_condition_87,
                               g_cir, g_drift_function, g_finite, g_infinite, m1_sigma2, m2_coefficient)
from hjmport.models import (AffineModelSpec, BondCoeffs, Family, FellerWarning, UtilityParams, bond_coeffs,
                            bond_m, bond_n, bond_price, make_cir, make_g2pp, make_gaussian_affine, make_merton,
                            make_vasicek, rolling_bond_vol, spec_from_json, spec_to_json)
from hjmport.oracle import (OracleReport, divergence_demo, feynman_kac_g, hjb_supremum_check,
                            pde_residual_finite, pde_residual_infinite)
from hjmport.simulate import (RewardEstimate, SimConfig, SimRun, estimate_reward_finite, estimate_reward_infinite,
                              simulate_factor, simulate_rolling_bond, simulate_tilde_factor, simulate_wealth)
from hjmport.strategy import (ConstantPolicy, OptimalPolicy, PortfolioMeasure, RankDeficient, TargetExposure,
                              build_f_matrix, exposure_operator, optimal_consumption, optimal_target,
                              solve_strategy)

__version__ = "0.1.0"
