import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from hjmport.gfunction import (DivergentKernel, GKernel, asymptotic_rate, check_condition_87, cir_kappa_tilde,
                               f_integral, g_affine_split, g_cir, g_drift_function, g_finite, g_infinite,
                               kernel_terms, m1_sigma2, m2_coefficient, m2_coefficient_ode)
from hjmport.models import UtilityParams, bond_n, make_cir, make_g2pp, make_gaussian_affine, make_merton, make_vasicek


def quad_g(spec, util, t, y):
    """Reference G by scipy quad on the kernel terms."""
    y = np.atleast_1d(y)

    def eta(u):
        kt = kernel_terms(spec, util, [u - t])
        return math.exp(float(kt.total[0] + kt.m2[0] @ y))

    val = util.a_weight * integrate.quad(eta, t, util.horizon, epsabs=0, epsrel=1e-12, limit=200)[0]
    return val + util.b_weight * eta(util.horizon)


class TestDriftFunction:
    def test_desk_value(self, vasicek):
        util = UtilityParams(0.5, 0.02, horizon=5.0)
        # (0.5*0.03 + 0.5/(2*0.5)*0.01 - 0.02)/0.5 = (0.015 + 0.005 - 0.02)/0.5
        assert g_drift_function(vasicek, util, [0.03]) == pytest.approx(0.0, abs=1e-16)

    def test_small_alpha(self):
        spec = make_vasicek(0.05, 0.2, 0.01, 0.0)
        util = UtilityParams(1e-8, 0.02, horizon=1.0)
        assert g_drift_function(spec, util, [0.0]) == pytest.approx(-0.02, rel=1e-7)

    def test_affine_split(self, g2pp):
        util = UtilityParams(0.3, 0.02, horizon=1.0)
        g0, g1 = g_affine_split(g2pp, util)
        np.testing.assert_allclose(g1, 0.3 / 0.7 * g2pp.phi2, rtol=1e-15)
        y = np.array([0.01, -0.02])
        assert g_drift_function(g2pp, util, y) == pytest.approx(g0 + g1 @ y, rel=1e-14)


class TestCoefficients:
    def test_terminal_zero(self, g2pp, desk_util):
        np.testing.assert_array_equal(m2_coefficient(g2pp, desk_util, 2.0, 2.0), 0.0)
        assert m1_sigma2(g2pp, desk_util, 2.0, 2.0) == (0.0, 0.0)

    def test_vasicek_m2(self, vasicek, desk_util):
        assert m2_coefficient(vasicek, desk_util, 1.0, 4.0)[0] == pytest.approx(bond_n(vasicek, 3.0)[0], rel=1e-14)

    def test_g2pp_m2(self, g2pp):
        util = UtilityParams(0.3, 0.02, horizon=5.0)
        np.testing.assert_allclose(m2_coefficient(g2pp, util, 0.5, 3.0), 0.3 / 0.7 * bond_n(g2pp, 2.5), rtol=1e-13)

    @pytest.mark.parametrize("fam", ["vasicek", "g2pp", "generic"])
    def test_m2_ode_cross_check(self, fam, vasicek, g2pp, desk_util):
        spec = {"vasicek": vasicek, "g2pp": g2pp,
                "generic": make_gaussian_affine([0.01, 0.0], [[-0.3, 0.1], [0.05, -0.2]], np.eye(2) * 0.01,
                                                [0.1, 0.0], 0.01, [1.0, 0.5])}[fam]
        np.testing.assert_allclose(m2_coefficient_ode(spec, desk_util, 0.0, 5.0),
                                   m2_coefficient(spec, desk_util, 0.0, 5.0), rtol=1e-10)

    def test_m2_order(self, vasicek, desk_util):
        with pytest.raises(ValueError):
            m2_coefficient(vasicek, desk_util, 2.0, 1.0)

    @pytest.mark.parametrize("fam", ["vasicek", "g2pp", "merton", "generic"])
    def test_f_integral(self, fam, vasicek, g2pp, desk_util):
        spec = {"vasicek": vasicek, "g2pp": g2pp, "merton": make_merton(0.05, 0.01, 0.1),
                "generic": make_gaussian_affine([0.01, 0.0], [[-0.3, 0.1], [0.05, -0.2]], np.eye(2) * 0.01,
                                                [0.1, 0.0], 0.01, [1.0, 0.5])}[fam]
        m1, s2 = m1_sigma2(spec, desk_util, 0.5, 4.0)
        assert m1 + s2 / 2 == pytest.approx(f_integral(spec, desk_util, 0.5, 4.0), abs=1e-10)

    def test_vasicek_sigma2(self, vasicek, desk_util):
        ab = 1.0
        ref = ab ** 2 * integrate.quad(lambda k: bond_n(vasicek, k)[0] ** 2 * 0.01 ** 2, 0, 3.0, epsrel=1e-13)[0]
        assert m1_sigma2(vasicek, desk_util, 1.0, 4.0)[1] == pytest.approx(ref, rel=1e-10)

    def test_g2pp_rho0_sigma2(self):
        spec = make_g2pp(0.1, 0.5, 0.01, 0.02, 0.0, 0.1, 0.1)
        util = UtilityParams(0.3, 0.02, horizon=5.0)
        ab = 0.3 / 0.7

        def f(k):
            n1, n2 = bond_n(spec, k)
            return n1 ** 2 * 0.01 ** 2 + n2 ** 2 * 0.02 ** 2

        ref = ab ** 2 * integrate.quad(f, 0, 4.0, epsrel=1e-13)[0]
        assert m1_sigma2(spec, util, 0.0, 4.0)[1] == pytest.approx(ref, rel=1e-10)

    def test_quadrature_method_matches_closed(self, vasicek, desk_util):
        tau = np.linspace(0, 5, 7)
        a = kernel_terms(vasicek, desk_util, tau, method="closed")
        b = kernel_terms(vasicek, desk_util, tau, method="quadrature")
        np.testing.assert_allclose(a.m1, b.m1, atol=1e-12)
        np.testing.assert_allclose(a.sigma2, b.sigma2, atol=1e-12)


class TestFinite:
    def test_terminal(self, vasicek):
        util = UtilityParams(0.5, 0.02, a=1.0, b=4.0, horizon=5.0)
        gv = g_finite(vasicek, util, 5.0, [0.03])
        assert gv.value == pytest.approx(16.0, rel=1e-15)
        np.testing.assert_array_equal(gv.grad_over_g, 0.0)

    def test_a_zero(self, vasicek):
        util = UtilityParams(0.5, 0.02, a=0.0, b=1.0, horizon=5.0)
        kt = kernel_terms(vasicek, util, [5.0])
        assert g_finite(vasicek, util, 0.0, [0.03]).value == pytest.approx(math.exp(kt.total[0] + kt.m2[0, 0] * 0.03),
                                                                         rel=1e-14)

    @pytest.mark.parametrize("fam", ["vasicek", "g2pp"])
    def test_against_scipy(self, fam, vasicek, g2pp, desk_util):
        spec, y = {"vasicek": (vasicek, [0.03]), "g2pp": (g2pp, [0.01, 0.02])}[fam]
        for t in (0.0, 2.5):
            assert g_finite(spec, desk_util, t, y).value == pytest.approx(quad_g(spec, desk_util, t, y), rel=1e-10)

    def test_gradient(self, g2pp, desk_util):
        k = GKernel(g2pp, desk_util)
        y, h = np.array([0.01, 0.02]), 1e-6
        fd = [(k(1.0, y + h * e) - k(1.0, y - h * e)) / (2 * h) for e in np.eye(2)]
        np.testing.assert_allclose(k.gvalue(1.0, y).grad, fd, rtol=1e-7)

    def test_vectorized(self, vasicek, desk_util):
        k = GKernel(vasicek, desk_util)
        ys = np.array([[0.0], [0.03], [0.1]])
        G, grad = k.evaluate(0.0, ys)
        assert G.shape == (3,) and grad.shape == (3, 1)
        assert G[1] == pytest.approx(k(0.0, [0.03]), rel=1e-15)

    def test_beyond_horizon(self, vasicek, desk_util):
        with pytest.raises(ValueError):
            g_finite(vasicek, desk_util, 6.0, [0.03])

    def test_infinite_util_rejected(self, vasicek, infinite_util):
        with pytest.raises(ValueError):
            g_finite(vasicek, infinite_util, 0.0, [0.03])

    @settings(max_examples=15, deadline=None)
    @given(g1=st.floats(0.0, 0.1), dg=st.floats(0.001, 0.1), a1=st.floats(0.1, 2.0), da=st.floats(0.01, 1.0),
           b1=st.floats(0.0, 2.0), db=st.floats(0.01, 1.0))
    def test_monotone(self, g1, dg, a1, da, b1, db):
        spec = make_vasicek(0.05, 0.2, 0.01, 0.1)
        base = g_finite(spec, UtilityParams(0.5, g1, a1, b1, 5.0), 0.0, [0.03]).value
        assert g_finite(spec, UtilityParams(0.5, g1 + dg, a1, b1, 5.0), 0.0, [0.03]).value < base
        assert g_finite(spec, UtilityParams(0.5, g1, a1 + da, b1, 5.0), 0.0, [0.03]).value > base
        assert g_finite(spec, UtilityParams(0.5, g1, a1, b1 + db, 5.0), 0.0, [0.03]).value > base

    def test_g2pp_degeneration(self):
        spec = make_g2pp(0.1, 0.5, 0.01, 0.0, 0.3, 0.1, 0.0, allow_degenerate=True)
        one = make_vasicek(0.0, 0.1, 0.01, 0.1)
        util = UtilityParams(0.5, 0.02, horizon=5.0)
        for y1 in (-0.02, 0.01, 0.05):
            a = g_finite(spec, util, 0.0, [y1, 0.0]).value
            b = g_finite(one, util, 0.0, [y1]).value
            assert a == pytest.approx(b, rel=1e-9)


class TestInfinite:
    def test_merton_diverges(self):
        util = UtilityParams(0.5, 0.02, horizon=math.inf)
        with pytest.raises(DivergentKernel, match="t\\^3/3"):
            g_infinite(make_merton(0.05, 0.01, 0.1), util, [0.03])

    def test_vasicek_rate(self, vasicek, infinite_util):
        rate, _ = asymptotic_rate(vasicek, infinite_util)
        # the slope of m1 + sigma2/2 at large s
        kt = kernel_terms(vasicek, infinite_util, [400.0, 401.0])
        assert rate == pytest.approx(float(np.diff(kt.total)[0]), rel=1e-9)
        assert rate < 0

    def test_vasicek_against_scipy(self, vasicek, infinite_util):
        util = infinite_util

        def eta(s):
            kt = kernel_terms(vasicek, util, [s])
            return math.exp(float(kt.total[0] + kt.m2[0, 0] * 0.03))

        ref = integrate.quad(eta, 0, 400.0, epsabs=0, epsrel=1e-12, limit=400)[0]
        gv = g_infinite(vasicek, util, [0.03])
        assert gv.value == pytest.approx(ref, rel=1e-9)
        assert gv.convergence_report.passed and gv.convergence_report.tail_bound <= 1e-10

    def test_finite_approaches_infinite(self, vasicek):
        fin = UtilityParams(0.5, 0.2, a=1.0, b=0.0, horizon=200.0)
        inf = UtilityParams(0.5, 0.2, a=1.0, b=0.0, horizon=math.inf)
        assert g_finite(vasicek, fin, 0.0, [0.03]).value == pytest.approx(g_infinite(vasicek, inf, [0.03]).value,
                                                                         rel=1e-6)

    def test_cir_infinite_finite(self, cir):
        util = UtilityParams(-1.0, 0.05, a=1.0, b=0.0, horizon=math.inf)
        gv = g_cir(cir, util, 0.0, 0.04)
        assert math.isfinite(gv.value) and gv.value > 0 and gv.candidate


class TestCir:
    def test_kappa_tilde(self, cir):
        assert cir_kappa_tilde(cir, UtilityParams(-1.0, 0.05, horizon=2.0)) == pytest.approx(0.29, rel=1e-14)

    def test_needs_negative_alpha(self, cir):
        with pytest.raises(ValueError):
            g_cir(cir, UtilityParams(0.5, 0.05, horizon=2.0), 0.0, 0.04)

    def test_negative_rate(self, cir, cir_util):
        with pytest.raises(ValueError):
            g_cir(cir, cir_util, 0.0, -0.01)

    def test_terminal(self, cir):
        util = UtilityParams(-1.0, 0.05, a=1.0, b=1.0, horizon=2.0)
        assert g_cir(cir, util, 2.0, 0.04).value == pytest.approx(1.0, rel=1e-15)

    def test_candidate_and_quadrature(self, cir, cir_util):
        gv = g_cir(cir, cir_util, 0.0, 0.04)
        assert gv.candidate
        assert gv.value == pytest.approx(quad_g(cir, cir_util, 0.0, [0.04]), rel=1e-10)

    def test_m2_ode(self, cir, cir_util):
        # the Riccati equation dB/dtau = 1*q... checked by finite differences of the closed form
        kt = kernel_terms(cir, cir_util, np.array([1.0 - 1e-5, 1.0, 1.0 + 1e-5]))
        B = -kt.m2[:, 0]
        kappa_t = cir_kappa_tilde(cir, cir_util)
        q = -cir_util.alpha_bar * (1 + 0.2 ** 2 / (2 * (1 - cir_util.alpha)))
        dB = (B[2] - B[0]) / 2e-5
        assert dB == pytest.approx(q - kappa_t * B[1] - 0.5 * 0.1 ** 2 * B[1] ** 2, rel=1e-7)


class TestMomentCondition:
    def test_vasicek_l2(self, vasicek, infinite_util):
        rep = check_condition_87(vasicek, infinite_util, 0.1)
        assert rep.l2 == pytest.approx(0.2)

    def test_merton_fails(self):
        rep = check_condition_87(make_merton(0.05, 0.01, 0.1), UtilityParams(0.5, 0.2, horizon=math.inf), 0.1)
        assert rep.l2 == 0.0 and not rep.passed

    @pytest.mark.parametrize("gamma", [0.02, 0.2, 0.5])
    def test_consistent_with_kernel(self, vasicek, gamma):
        util = UtilityParams(0.5, gamma, horizon=math.inf)
        rep = check_condition_87(vasicek, util, 0.1)
        if rep.integrable:
            assert g_infinite(vasicek, util, [0.03]).convergence_report.passed
        else:
            # the condition is sufficient only; whatever the kernel says, it must not contradict the rate
            rate_a, rate_s = asymptotic_rate(vasicek, util)
            assert 2 * rate_a + rate_s >= 0

    def test_non_gaussian(self, cir):
        with pytest.raises(ValueError):
            check_condition_87(cir, UtilityParams(-1.0, 0.05, horizon=math.inf), 0.1)
