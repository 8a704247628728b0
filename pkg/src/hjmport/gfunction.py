"""
Value-function kernel G for the consumption-investment problem.

For a power-utility investor the value function is (1/alpha) G^{1-alpha} z^alpha,
where G solves the linear PDE

    G_t + L G + alpha/(1-alpha) <Sigma lambda, D G> + g G + a^{1/(1-alpha)} = 0,
    G(T, y) = b^{1/(1-alpha)},

    g(y) = [alpha r(y) + alpha |lambda(y)|^2 / (2(1-alpha)) - gamma] / (1 - alpha).

In the affine families int_t^u g(Y~) is Gaussian (or has an exponential-affine
Laplace transform for CIR), which gives

    G(t, y) = a' int_t^T eta(t, u, y) du + b' eta(t, T, y),
    eta = exp(m1 + <m2, y> + sigma2 / 2),

with coefficients that only depend on tau = u - t. This module computes those
coefficients and evaluates G and D_y G / G by a fixed composite Gauss-Legendre
rule in tau (fixed so G is smooth in (t, y) for finite-difference checks).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from hjmport._numerics import composite_rule, integrate_cumulative, integrated_exponential, phi
from hjmport.models import AffineModelSpec, Family, UtilityParams, cir_affine_exponent


class DivergentKernel(ArithmeticError):
    """The infinite-horizon kernel integral does not converge."""


# ---------------------------------------------------------------------------
# drift function g and its affine split


def g_drift_function(spec: AffineModelSpec, util: UtilityParams, y) -> np.ndarray:
    """g(y) = [alpha r + alpha |lambda|^2 / (2(1-alpha)) - gamma] / (1-alpha)."""
    al = util.alpha
    y = np.asarray(y, dtype=float)
    lam2 = (spec.lambda_at(y) ** 2).sum(axis=-1)
    return (al * spec.short_rate(y) + al * lam2 / (2.0 * (1.0 - al)) - util.gamma) / (1.0 - al)


def g_affine_split(spec: AffineModelSpec, util: UtilityParams) -> tuple[float, np.ndarray]:
    """(g0, g1) with g(y) = g0 + <g1, y>."""
    al = util.alpha
    if spec.family is Family.CIR:
        lb = spec.lam[0]
        g1 = np.array([util.alpha_bar * (1.0 + lb ** 2 / (2.0 * (1.0 - al)))])
        return -util.gamma / (1.0 - al), g1
    lam2 = float(spec.lam @ spec.lam)
    g0 = (al * spec.phi1 + al * lam2 / (2.0 * (1.0 - al)) - util.gamma) / (1.0 - al)
    return g0, util.alpha_bar * spec.phi2


def _tilde_drift_const(spec: AffineModelSpec, util: UtilityParams) -> np.ndarray:
    return spec.b1 + spec.sigma @ spec.lam / (1.0 - util.alpha)


# ---------------------------------------------------------------------------
# tau-dependent coefficients


@dataclass
class KernelTerms:
    """Coefficient table at a set of tau values.

    ``total`` is m1 + sigma2/2 (the log of eta at y = 0), ``m2`` has shape
    (len(tau), n).
    """

    tau: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    sigma2: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.m1 + 0.5 * self.sigma2


def _vasicek_terms(spec, util, tau):
    p = spec.params
    kappa = p.get("kappa", 0.0)
    ab = util.alpha_bar
    g0, _ = g_affine_split(spec, util)
    c = float(_tilde_drift_const(spec, util)[0])
    z = -kappa * tau
    m2 = ab * tau * phi(1, z)
    sigma2 = ab ** 2 * p["sigma"] ** 2 * 2.0 * tau ** 3 * (2.0 * phi(3, 2.0 * z) - phi(3, z))
    m1 = g0 * tau + c * ab * tau ** 2 * phi(2, z)
    return KernelTerms(tau, m1, m2[:, None], sigma2)


def _gaussian_terms_quadrature(spec, util, tau):
    g0, g1 = g_affine_split(spec, util)
    c = _tilde_drift_const(spec, util)
    q = spec.sigma @ spec.sigma.T
    b2t = spec.b2.T

    def h(v):
        return integrated_exponential(b2t, g1, v)

    def integrand(v):
        hv = h(v)
        quad = np.einsum("ki,ij,kj->k", hv, q, hv)
        return np.stack([quad, hv @ c], axis=1)

    order = np.argsort(tau, kind="stable")
    srt = tau[order]
    width = 1.0 / max(1.0, float(np.abs(np.linalg.eigvals(spec.b2)).max(initial=0.0)))
    cum = integrate_cumulative(integrand, srt, width)
    sigma2 = np.empty_like(tau)
    drift = np.empty_like(tau)
    sigma2[order] = cum[:, 0]
    drift[order] = cum[:, 1]
    return KernelTerms(tau, g0 * tau + drift, h(tau), sigma2)


def _cir_params(spec, util):
    p = spec.params
    al = util.alpha
    q = -util.alpha_bar * (1.0 + p["lambda_bar"] ** 2 / (2.0 * (1.0 - al)))
    kappa_t = p["kappa"] - p["lambda_bar"] * p["sigma"] / (1.0 - al)
    return q, kappa_t


def cir_kappa_tilde(spec: AffineModelSpec, util: UtilityParams) -> float:
    """Mean reversion of the CIR Feynman-Kac dynamics, kappa - lambda sigma / (1 - alpha)."""
    return _cir_params(spec, util)[1]


def _cir_terms(spec, util, tau):
    if util.alpha >= 0:
        raise ValueError("the CIR kernel is only available for alpha < 0 (candidate mode)")
    p = spec.params
    q, kappa_t = _cir_params(spec, util)
    A, B = cir_affine_exponent(q, kappa_t, p["beta"], p["sigma"], tau)
    m1 = A - util.gamma * tau / (1.0 - util.alpha)
    return KernelTerms(tau, m1, -B[:, None], np.zeros_like(tau))


def kernel_terms(spec: AffineModelSpec, util: UtilityParams, tau, method: str = "auto") -> KernelTerms:
    """m1, m2 and sigma2 as functions of tau = u - t.

    ``method`` is "auto" (closed form where one exists), "closed" or
    "quadrature" (Gaussian families only).
    """
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any(tau < 0):
        raise ValueError("need t <= u")
    if spec.family is Family.CIR:
        return _cir_terms(spec, util, tau)
    closed_ok = spec.family in (Family.VASICEK, Family.MERTON)
    if method == "closed" and not closed_ok:
        raise ValueError(f"no closed form for {spec.family.value}")
    if closed_ok and method in ("auto", "closed"):
        return _vasicek_terms(spec, util, tau)
    return _gaussian_terms_quadrature(spec, util, tau)


def m2_coefficient(spec: AffineModelSpec, util: UtilityParams, t: float, u: float) -> np.ndarray:
    """Coefficient of y in the mean of int_t^u g(Y~), shape (n,)."""
    if t > u:
        raise ValueError("need t <= u")
    return kernel_terms(spec, util, [u - t]).m2[0]


def m2_coefficient_ode(spec: AffineModelSpec, util: UtilityParams, t: float, u: float,
                       steps: int = 2000) -> np.ndarray:
    """Same quantity by RK4 on d m2/d tau = B2^T m2 + g1, m2(0) = 0."""
    if t > u:
        raise ValueError("need t <= u")
    if not spec.is_gaussian:
        raise ValueError("ODE path is for Gaussian families")
    _, g1 = g_affine_split(spec, util)
    b2t = spec.b2.T
    hstep = (u - t) / steps
    m = np.zeros(spec.dim_factor)
    f = lambda v: b2t @ v + g1  # noqa: E731
    for _ in range(steps):
        k1 = f(m)
        k2 = f(m + 0.5 * hstep * k1)
        k3 = f(m + 0.5 * hstep * k2)
        k4 = f(m + hstep * k3)
        m = m + hstep / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return m


def m1_sigma2(spec: AffineModelSpec, util: UtilityParams, t: float, u: float,
              method: str = "auto") -> tuple[float, float]:
    """(m1, sigma2) for the pair (t, u)."""
    if t > u:
        raise ValueError("need t <= u")
    kt = kernel_terms(spec, util, [u - t], method)
    return float(kt.m1[0]), float(kt.sigma2[0])


def f_integral(spec: AffineModelSpec, util: UtilityParams, t: float, u: float) -> float:
    """int_t^u f(k, u) dk with

        f = 1/2 <m2, Sigma Sigma^T m2> + <B1, m2>
            + <m2, Sigma lambda>/(1-alpha) + g0,

    integrated adaptively; equals m1 + sigma2/2 (Gaussian families).
    """
    if t > u:
        raise ValueError("need t <= u")
    g0, g1 = g_affine_split(spec, util)
    q = spec.sigma @ spec.sigma.T
    sl = spec.sigma @ spec.lam

    def f(k):
        m2 = integrated_exponential(spec.b2.T, g1, [u - k])[0]
        return 0.5 * m2 @ q @ m2 + spec.b1 @ m2 + m2 @ sl / (1.0 - util.alpha) + g0

    val, _ = integrate.quad(f, t, u, epsabs=1e-14, epsrel=1e-12, limit=200)
    return val


# ---------------------------------------------------------------------------
# asymptotics (infinite horizon)


@dataclass
class ConvergenceReport:
    """Infinite-horizon diagnostics.

    ``rate`` is the asymptotic slope of m1 + sigma2/2 in s; the kernel
    integral converges iff it is negative.
    """

    rate: float
    truncation: float = math.nan
    tail_bound: float = math.nan
    passed: bool = False
    note: str = ""


def asymptotic_rate(spec: AffineModelSpec, util: UtilityParams) -> tuple[float, float]:
    """Limit slopes of (m1 + sigma2/2, sigma2) as s -> infinity.

    Returns +inf when m2 is unbounded (a mean-reversion matrix with a
    nonnegative eigenvalue in a direction the short rate loads on).
    """
    if spec.family is Family.CIR:
        p = spec.params
        q, kappa_t = _cir_params(spec, util)
        h = math.sqrt(kappa_t ** 2 + 2.0 * q * p["sigma"] ** 2)
        rate = (p["beta"] / p["sigma"] ** 2) * (kappa_t - h) - util.gamma / (1.0 - util.alpha)
        return rate, 0.0
    g0, g1 = g_affine_split(spec, util)
    eig = np.linalg.eigvals(spec.b2)
    if np.all(eig.real < 0):
        h_inf = -np.linalg.solve(spec.b2.T, g1)
        q = spec.sigma @ spec.sigma.T
        s_rate = float(h_inf @ q @ h_inf)
        return g0 + float(_tilde_drift_const(spec, util) @ h_inf) + 0.5 * s_rate, s_rate
    if np.allclose(g1, 0.0):
        return g0, 0.0
    return math.inf, math.inf


def _relaxation_time(spec: AffineModelSpec, util: UtilityParams) -> float:
    if spec.family is Family.CIR:
        p = spec.params
        q, kappa_t = _cir_params(spec, util)
        return 10.0 / math.sqrt(kappa_t ** 2 + 2.0 * q * p["sigma"] ** 2)
    slow = np.abs(np.linalg.eigvals(spec.b2).real).min()
    return min(10.0 / slow, 1e3) if slow > 0 else 10.0


# ---------------------------------------------------------------------------
# the kernel itself


@dataclass
class GValue:
    """G at one state together with D_y G / G.

    ``m1`` and ``sigma2`` are the coefficients at u = T (finite horizon).
    """

    value: float
    grad_over_g: np.ndarray
    t: float
    y: np.ndarray
    horizon: float
    m1: float = math.nan
    sigma2: float = math.nan
    candidate: bool = False
    convergence_report: ConvergenceReport | None = None

    @property
    def grad(self) -> np.ndarray:
        return self.grad_over_g * self.value


@dataclass
class GKernel:
    """Evaluator of G(t, y) and D_y G for a fixed model and utility.

    The tau-integral uses a composite Gauss-Legendre rule whose panel count
    is picked once, at construction, by doubling until the value at
    ``y_ref`` is stable to ``rtol``. For the infinite horizon the integral
    is truncated at ``report.truncation``.
    """

    spec: AffineModelSpec
    util: UtilityParams
    y_ref: np.ndarray | None = None
    rtol: float = 1e-13
    order: int = 16
    max_panels: int = 4096
    panels: int = field(init=False, default=1)
    span: float = field(init=False, default=0.0)
    report: ConvergenceReport | None = field(init=False, default=None)

    def __post_init__(self):
        spec, util = self.spec, self.util
        n = spec.dim_factor
        self.y_ref = np.zeros(n) if self.y_ref is None else np.asarray(self.y_ref, float).reshape(n)
        if spec.family is Family.CIR and util.alpha >= 0:
            raise ValueError("the CIR kernel is only available for alpha < 0 (candidate mode)")
        if util.infinite:
            self._setup_infinite()
        else:
            self.span = util.horizon
            self.panels = self._choose_panels(1)

    @property
    def candidate(self) -> bool:
        return self.spec.family is Family.CIR

    def terms(self, tau) -> KernelTerms:
        return kernel_terms(self.spec, self.util, tau)

    # -- rule selection --------------------------------------------------

    def _estimate(self, panels: int, span: float):
        x, w = composite_rule(panels, self.order)
        kt = self.terms(span * x)
        e = np.exp(kt.total + kt.m2 @ self.y_ref)
        val = span * (w * e).sum()
        grad = span * ((w * e)[:, None] * kt.m2).sum(axis=0)
        return val, grad

    def _choose_panels(self, start: int) -> int:
        p = max(1, start)
        prev = self._estimate(p, self.span)
        while p < self.max_panels:
            cur = self._estimate(2 * p, self.span)
            scale = abs(cur[0]) + 1e-300
            if (abs(cur[0] - prev[0]) <= self.rtol * scale
                    and np.all(np.abs(cur[1] - prev[1]) <= self.rtol * (scale + np.abs(cur[1])))):
                return p
            p, prev = 2 * p, cur
        return p

    def _setup_infinite(self):
        spec, util = self.spec, self.util
        rate, _ = asymptotic_rate(spec, util)
        if not rate < 0:
            self.report = ConvergenceReport(rate, note="asymptotic growth rate is nonnegative")
            raise DivergentKernel(
                f"kernel integral diverges (asymptotic rate {rate:g} >= 0); "
                "e.g. in the Merton model int W has variance t^3/3 and the expectation is infinite")
        tau0 = _relaxation_time(spec, util)
        grid = np.linspace(0.0, tau0, 401)
        kt = self.terms(grid)
        env = kt.total + kt.m2 @ self.y_ref
        drop = 25.0
        s = tau0 + max(0.0, env[-1] - (env.max() - drop)) / -rate
        # extend until the exponential tail is negligible relative to the integral
        for _ in range(200):
            self.span = s
            self.panels = self._choose_panels(max(1, int(math.ceil(s / (tau0 / 10.0)))))
            val = self._estimate(self.panels, s)[0]
            end = self.terms([s])
            tail = math.exp(float(end.total[0] + end.m2[0] @ self.y_ref)) / -rate
            if tail <= 1e-10 * val:
                break
            s += 5.0 / -rate
        else:
            raise DivergentKernel("could not find a truncation point with a negligible tail")
        self.report = ConvergenceReport(float(rate), float(s), float(tail / val), True)

    # -- evaluation ------------------------------------------------------

    def _remaining(self, t: float) -> float:
        if self.util.infinite:
            return self.span
        if t > self.util.horizon + 1e-12:
            raise ValueError("t beyond the horizon")
        return max(self.util.horizon - t, 0.0)

    def node_table(self, t: float):
        """Quadrature weights and coefficient tables at time t.

        Returns (w, total, m2, end_total, end_m2) where the last two are the
        terminal (u = T) coefficients (unused on the infinite horizon).
        """
        span = self._remaining(t)
        x, w = composite_rule(self.panels, self.order)
        tau = np.concatenate([span * x, [span]])
        kt = self.terms(tau)
        return span * w, kt.total[:-1], kt.m2[:-1], kt.total[-1], kt.m2[-1]

    def evaluate(self, t: float, y):
        """G and D_y G at time t for states y of shape (..., n)."""
        y = np.asarray(y, dtype=float)
        shape = y.shape[:-1]
        flat = y.reshape(-1, self.spec.dim_factor)
        w, tot, m2, end_tot, end_m2 = self.node_table(t)
        expo = tot[None, :] + (flat[:, None, :] * m2[None, :, :]).sum(axis=-1)
        e = np.exp(expo) * w[None, :]
        qa, qb = self.util.a_weight, self.util.b_weight
        G = qa * e.sum(axis=1)
        grad = qa * (e[:, :, None] * m2[None, :, :]).sum(axis=1)
        if qb > 0:
            eT = qb * np.exp(end_tot + (flat * end_m2).sum(axis=-1))
            G = G + eT
            grad = grad + eT[:, None] * end_m2
        return G.reshape(shape), grad.reshape(shape + (self.spec.dim_factor,))

    def value(self, t: float, y):
        return self.evaluate(t, y)[0]

    def __call__(self, t: float, y):
        return self.value(t, y)

    def gvalue(self, t: float, y) -> GValue:
        y = np.asarray(y, dtype=float).reshape(self.spec.dim_factor)
        G, grad = self.evaluate(t, y)
        G = float(G)
        if G == 0.0 and self.util.b_weight == 0.0 and not self.util.infinite and t >= self.util.horizon:
            raise ValueError("G vanishes at the horizon when b = 0; the optimal controls are undefined there")
        if not (np.isfinite(G) and G > 0):
            raise ArithmeticError(f"kernel evaluation failed (G = {G})")
        m1 = s2 = math.nan
        if not self.util.infinite:
            kt = self.terms([self._remaining(t)])
            m1, s2 = float(kt.m1[0]), float(kt.sigma2[0])
        return GValue(G, grad / G, t, y, self.util.horizon, m1, s2, self.candidate, self.report)


def g_finite(spec: AffineModelSpec, util: UtilityParams, t: float, y,
             kernel: GKernel | None = None) -> GValue:
    """Finite-horizon kernel at (t, y)."""
    if util.infinite:
        raise ValueError("utility has an infinite horizon; use g_infinite")
    if t > util.horizon:
        raise ValueError("t beyond the horizon")
    kernel = kernel or GKernel(spec, util, y_ref=y)
    return kernel.gvalue(t, y)


def g_cir(spec: AffineModelSpec, util: UtilityParams, t: float, r: float,
          kernel: GKernel | None = None) -> GValue:
    """CIR candidate kernel (alpha < 0); the result carries ``candidate=True``."""
    if spec.family is not Family.CIR:
        raise ValueError("g_cir needs a CIR model")
    if r < 0:
        raise ValueError("short rate must be nonnegative")
    if util.alpha >= 0:
        raise ValueError("the CIR kernel is only available for alpha < 0 (candidate mode)")
    if util.infinite:
        return g_infinite(spec, util, [r], kernel)
    return g_finite(spec, util, t, [r], kernel)


def g_infinite(spec: AffineModelSpec, util: UtilityParams, y,
               kernel: GKernel | None = None) -> GValue:
    """Infinite-horizon kernel G(y) = a' int_0^inf eta(0, s, y) ds.

    Raises DivergentKernel when the integrand does not decay.
    """
    if not util.infinite:
        raise ValueError("utility has a finite horizon; use g_finite")
    kernel = kernel or GKernel(spec, util, y_ref=y)
    return kernel.gvalue(0.0, y)


# ---------------------------------------------------------------------------
# sufficient condition for the infinite-horizon theory


@dataclass
class Condition87Report:
    """Dissipativity constant and exponential-moment envelope.

    ``kappa`` is sup_{s >= t} sup_{|y| <= radius} E exp(2 int_0^s g(Y~)) on
    the grid ``t``; ``rate`` is its asymptotic log-slope.
    """

    l2: float
    radius: float
    t: np.ndarray
    kappa: np.ndarray
    rate: float
    integral: float
    integrable: bool
    passed: bool


def check_condition_87(spec: AffineModelSpec, util: UtilityParams, radius_n: float,
                       t_max: float = 200.0, points: int = 2001) -> Condition87Report:
    """Dissipativity and integrability of sqrt(t kappa(t, n)) for Gaussian families."""
    if not spec.is_gaussian:
        raise ValueError("condition check needs a Gaussian affine family")
    l2 = float(np.linalg.eigvalsh(-(spec.b2 + spec.b2.T) / 2.0).min())
    rate_a, rate_s = asymptotic_rate(spec, util)
    rate = 2.0 * rate_a + rate_s if math.isfinite(rate_a) else math.inf
    t = np.linspace(0.0, t_max, points)
    kt = kernel_terms(spec, util, t)
    log_k = 2.0 * kt.m1 + 2.0 * kt.sigma2 + 2.0 * radius_n * np.linalg.norm(kt.m2, axis=1)
    log_k = np.maximum.accumulate(log_k[::-1])[::-1]
    with np.errstate(over="ignore", invalid="ignore"):
        kappa = np.exp(log_k)
        integral = float(integrate.trapezoid(np.sqrt(t * kappa), t))
    if not math.isfinite(integral):
        integral = math.inf
    integrable = rate < 0
    return Condition87Report(l2, radius_n, t, kappa, rate, integral, integrable,
                             bool(integrable and l2 > 0))
