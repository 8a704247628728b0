import math

import numpy as np
import pytest

from hjmport.gfunction import DivergentKernel, GKernel, g_finite
from hjmport.models import UtilityParams, make_merton
from hjmport.oracle import (OracleReport, divergence_demo, feynman_kac_g, gradient_check, hjb_perturbation_check,
                            hjb_supremum_check, hjb_value_residual, mc_bond_price, merton_log_integrand,
                            pde_residual_finite, pde_residual_grid, pde_residual_infinite, run_validation_suite,
                            value_exponent_check)
from hjmport.simulate import SimConfig


class TestReport:
    def test_passed_is_derived(self):
        assert OracleReport("q", 1.0, 1.1, 0.5, 1.0).passed
        assert not OracleReport("q", 1.0, 1.1, 1.5, 1.0).passed


class TestMonteCarlo:
    def test_feynman_kac_vasicek_short(self, vasicek):
        util = UtilityParams(0.5, 0.02, 1.0, 1.0, 1.0)
        rep = feynman_kac_g(vasicek, util, 0.0, [0.03], SimConfig(n_paths=2000, dt=1 / 52, seed=4))
        assert rep.passed, rep

    def test_feynman_kac_at_horizon(self, vasicek, desk_util):
        rep = feynman_kac_g(vasicek, desk_util, 5.0, [0.03], SimConfig(n_paths=10))
        assert rep.passed and rep.oracle_value == 1.0

    def test_feynman_kac_detects_wrong_reference(self, vasicek):
        util = UtilityParams(0.5, 0.02, 1.0, 1.0, 1.0)
        ref = g_finite(vasicek, util, 0.0, [0.03]).value
        rep = feynman_kac_g(vasicek, util, 0.0, [0.03], SimConfig(n_paths=2000, dt=1 / 52, seed=4),
                            reference=1.01 * ref)
        assert not rep.passed

    @pytest.mark.parametrize("x", [0.0, 1.0, 3.0])
    def test_bond_price(self, g2pp, x):
        assert mc_bond_price(g2pp, x, [0.01, 0.02], SimConfig(n_paths=4000, dt=1 / 52, seed=2)).passed

    def test_bond_price_cir(self, cir):
        rep = mc_bond_price(cir, 2.0, [0.04], SimConfig(n_paths=4000, dt=1 / 252, seed=2))
        assert rep.passed and rep.candidate


class TestResiduals:
    def test_finite_grid(self, vasicek, desk_util):
        k = GKernel(vasicek, desk_util)
        reps = pde_residual_grid(vasicek, desk_util, k, [0.0, 2.5], [np.array([0.0]), np.array([0.05])])
        assert all(r.passed for r in reps)

    def test_perturbed_fails(self, vasicek, desk_util):
        k = GKernel(vasicek, desk_util)
        rep = pde_residual_finite(vasicek, desk_util, lambda t, y: 1.01 * k(t, y), 1.0, [0.03])
        assert not rep.passed

    def test_wrong_sign_time_derivative_fails(self, vasicek, desk_util):
        # G(T - t) solves the PDE with the opposite time derivative
        k = GKernel(vasicek, desk_util)
        rep = pde_residual_finite(vasicek, desk_util, lambda t, y: k(5.0 - t, y), 2.0, [0.03])
        assert not rep.passed

    def test_stencil_horizon(self, vasicek, desk_util):
        k = GKernel(vasicek, desk_util)
        with pytest.raises(ValueError):
            pde_residual_finite(vasicek, desk_util, k, 5.0, [0.03])

    def test_cir_stencil_negative(self, cir, cir_util):
        k = GKernel(cir, cir_util)
        with pytest.raises(ValueError):
            pde_residual_finite(cir, cir_util, k, 0.5, [0.0])

    def test_infinite(self, vasicek, infinite_util):
        k = GKernel(vasicek, infinite_util)
        assert pde_residual_infinite(vasicek, infinite_util, lambda y: k(0.0, y), [0.03]).passed

    def test_infinite_divergent(self):
        util = UtilityParams(0.5, 0.02, horizon=math.inf)
        with pytest.raises(DivergentKernel):
            pde_residual_infinite(make_merton(0.05, 0.01, 0.1), util, lambda y: 1.0, [0.03])

    def test_gradient_check(self, g2pp, desk_util):
        assert gradient_check(GKernel(g2pp, desk_util), 1.0, [0.01, 0.02]).passed


class TestHjb:
    @pytest.mark.parametrize("fam", ["vasicek", "g2pp"])
    def test_supremum(self, fam, vasicek, g2pp, desk_util):
        spec, y = {"vasicek": (vasicek, [0.03]), "g2pp": (g2pp, [0.01, 0.02])}[fam]
        gv = g_finite(spec, desk_util, 0.5, y)
        assert hjb_supremum_check(spec, desk_util, gv, 0.5, y).passed

    def test_supremum_negative_alpha(self, cir, cir_util):
        gv = g_finite(cir, cir_util, 0.0, [0.04])
        rep = hjb_supremum_check(cir, cir_util, gv, 0.0, [0.04])
        assert rep.passed and rep.candidate

    def test_perturbation(self, g2pp, desk_util):
        gv = g_finite(g2pp, desk_util, 0.0, [0.01, 0.02])
        assert hjb_perturbation_check(g2pp, desk_util, gv, 0.0, [0.01, 0.02])

    def test_value_exponent(self, vasicek, desk_util):
        out = value_exponent_check(vasicek, desk_util, GKernel(vasicek, desk_util), [0.03], t=1.0)
        assert out["1-alpha"].passed
        assert not out["1/(1-alpha)"].passed

    def test_value_exponent_infinite(self, vasicek, infinite_util):
        out = value_exponent_check(vasicek, infinite_util, GKernel(vasicek, infinite_util), [0.03])
        assert out["1-alpha"].passed and not out["1/(1-alpha)"].passed

    def test_value_residual_perturbed(self, g2pp, desk_util):
        k = GKernel(g2pp, desk_util)
        assert not hjb_value_residual(g2pp, desk_util, lambda t, y: 1.01 * k(t, y) ** 0.5, 1.0, [0.01, 0.02]).passed


class TestDivergence:
    def test_log_integrand_matches_simulation_free_limit(self):
        # sigma = 0: deterministic wealth, exact exponent
        a, g, c, b, r0 = 0.5, 0.02, 0.02, 0.05, 0.03
        t = 3.0
        z = math.exp(r0 * t + b * t ** 2 / 2 - c * t)
        ref = math.log(math.exp(-g * t) * (c * z) ** a)
        assert float(merton_log_integrand(t, a, g, c, b, 0.0, 0.1, r0)) == pytest.approx(ref, rel=1e-14)

    def test_demo_small(self):
        rep = divergence_demo(SimConfig(n_paths=2000, dt=1 / 12, seed=1))
        assert rep.increasing
        assert rep.variance_ok
        assert rep.contrast_suppressed
        assert "t^3/6" in rep.exponent
        for est, se, ex in zip(rep.estimates, rep.stderrs, rep.analytic):
            assert abs(est - ex) <= max(4 * se, 2e-3 * ex)


class TestSuite:
    def test_vasicek_suite(self, vasicek, desk_util):
        reps = run_validation_suite(vasicek, desk_util, [0.03], SimConfig(n_paths=2000, dt=1 / 52, seed=1))
        assert all(r.passed for r in reps), [r for r in reps if not r.passed]
        assert not any(r.candidate for r in reps)

    def test_perturbed_suite_fails(self, vasicek, desk_util):
        reps = run_validation_suite(vasicek, desk_util, [0.03], SimConfig(n_paths=500, dt=1 / 52), perturb=0.01)
        assert not all(r.passed for r in reps)

    def test_cir_suite_candidate(self, cir, cir_util):
        reps = run_validation_suite(cir, cir_util, [0.04], SimConfig(n_paths=500, dt=1 / 52), monte_carlo=False)
        assert all(r.passed for r in reps) and all(r.candidate for r in reps)
