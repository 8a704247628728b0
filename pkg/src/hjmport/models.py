"""
Affine factor / short-rate models and their bond-pricing coefficients.

The factor process follows

    dY = [B1 + B2 Y + Sigma(Y) lambda(Y)] dt + Sigma(Y) dW,     r = phi1 + <phi2, Y>

under the physical measure, so B1 + B2 Y is the risk-neutral drift. Zero-coupon
prices in the Musiela parametrisation are P(t)(x) = exp(m(x) - <n(x), Y(t)>).

Supported families: Merton (Vasicek with kappa = 0), Vasicek, CIR (with
lambda(r) = lambda_bar * sqrt(r)), G2++ and a generic constant-coefficient
Gaussian affine model.
"""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import integrate

from hjmport._numerics import integrated_exponential, phi

DEFAULT_T_STAR = 30.0


class Family(str, enum.Enum):
    MERTON = "merton"
    VASICEK = "vasicek"
    CIR = "cir"
    G2PP = "g2pp"
    GAUSSIAN_AFFINE = "gaussian_affine"


class FellerWarning(UserWarning):
    """CIR parameters violate 2 beta >= sigma^2."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AffineModelSpec:
    """Coefficients of an affine factor model.

    Attributes
    ----------
    family : Family
    b1 : (n,) drift constant
    b2 : (n, n) drift linear part, drift = b1 + b2 @ y
    sigma : (n, m) diffusion matrix. For CIR this is the constant sigma that
        multiplies sqrt(r); query :meth:`diffusion_at` instead of reading it.
    lam : (m,) market price of risk (CIR: lambda_bar, scaled by sqrt(r))
    phi1, phi2 : short rate r = phi1 + phi2 @ y
    t_star : maximal time to maturity
    params : constructor arguments, used for JSON round trips
    """

    family: Family
    b1: np.ndarray
    b2: np.ndarray
    sigma: np.ndarray
    lam: np.ndarray
    phi1: float
    phi2: np.ndarray
    t_star: float = DEFAULT_T_STAR
    params: dict = field(default_factory=dict)
    feller_ok: bool = True

    def __post_init__(self):
        for name in ("b1", "b2", "sigma", "lam", "phi2"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n, m = self.sigma.shape
        if self.b1.shape != (n,) or self.b2.shape != (n, n) or self.phi2.shape != (n,):
            raise ValueError("inconsistent factor dimensions")
        if self.lam.shape != (m,):
            raise ValueError("lambda must have one entry per Wiener component")
        if not self.t_star > 0:
            raise ValueError("t_star must be positive")
        if self.family is Family.CIR and (n, m) != (1, 1):
            raise ValueError("CIR is one-dimensional")

    @property
    def dim_factor(self) -> int:
        return self.sigma.shape[0]

    @property
    def dim_noise(self) -> int:
        return self.sigma.shape[1]

    @property
    def is_gaussian(self) -> bool:
        return self.family is not Family.CIR

    @property
    def b2_diagonal(self) -> bool:
        return bool(np.all(self.b2 == np.diag(np.diag(self.b2))))

    def diffusion_at(self, y) -> np.ndarray:
        """Sigma(y); shape (..., n, m) for y of shape (..., n)."""
        y = np.asarray(y, dtype=float)
        if self.family is Family.CIR:
            root = np.sqrt(np.clip(y[..., 0], 0.0, None))
            return self.sigma * root[..., None, None]
        return np.broadcast_to(self.sigma, y.shape[:-1] + self.sigma.shape)

    def lambda_at(self, y) -> np.ndarray:
        """lambda(y); shape (..., m)."""
        y = np.asarray(y, dtype=float)
        if self.family is Family.CIR:
            root = np.sqrt(np.clip(y[..., 0], 0.0, None))
            return self.lam * root[..., None]
        return np.broadcast_to(self.lam, y.shape[:-1] + self.lam.shape)

    def short_rate(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.phi1 + (y * self.phi2).sum(axis=-1)

    def drift(self, y, lambda_weight: float = 1.0) -> np.ndarray:
        """b1 + b2 y + w * Sigma(y) lambda(y).

        ``lambda_weight`` is 1 for the physical measure, 0 for the martingale
        measure and 1/(1 - alpha) for the Feynman-Kac (tilde) dynamics.
        """
        y = np.asarray(y, dtype=float)
        base = self.b1 + (y[..., None, :] * self.b2).sum(axis=-1)
        if lambda_weight == 0.0:
            return base
        sl = (self.diffusion_at(y) * self.lambda_at(y)[..., None, :]).sum(axis=-1)
        return base + lambda_weight * sl

    def with_lambda(self, lam) -> "AffineModelSpec":
        """Copy with a different market price of risk."""
        params = dict(self.params)
        return AffineModelSpec(self.family, self.b1, self.b2, self.sigma, lam,
                               self.phi1, self.phi2, self.t_star, params, self.feller_ok)


@dataclass(frozen=True)
class UtilityParams:
    """Power-utility preferences.

    ``horizon`` is the finite investment horizon T, or ``math.inf`` for the
    infinite-horizon problem (where ``b`` is ignored).
    """

    alpha: float
    gamma: float
    a: float = 1.0
    b: float = 1.0
    horizon: float = 1.0

    def __post_init__(self):
        if self.alpha == 0 or self.alpha >= 1:
            raise ValueError("alpha must be nonzero and below 1")
        if self.gamma < 0 or self.a < 0 or self.b < 0:
            raise ValueError("gamma, a and b must be nonnegative")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.infinite:
            if self.a <= 0:
                raise ValueError("infinite horizon needs a > 0")
        elif self.a + self.b <= 0:
            raise ValueError("a + b must be positive")

    @property
    def infinite(self) -> bool:
        return math.isinf(self.horizon)

    @property
    def alpha_bar(self) -> float:
        return self.alpha / (1.0 - self.alpha)

    @property
    def a_weight(self) -> float:
        """a^{1/(1-alpha)}"""
        return self.a ** (1.0 / (1.0 - self.alpha))

    @property
    def b_weight(self) -> float:
        """b^{1/(1-alpha)}; zero on the infinite horizon."""
        return 0.0 if self.infinite else self.b ** (1.0 / (1.0 - self.alpha))


# ---------------------------------------------------------------------------
# constructors


def _check_ellipticity(sigma: np.ndarray):
    q = sigma @ sigma.T
    if np.linalg.eigvalsh(q).min() <= 0:
        raise ValueError("Sigma Sigma^T must be positive definite")


def make_merton(beta: float, sigma: float, lambda_: float,
                t_star: float = DEFAULT_T_STAR) -> AffineModelSpec:
    """Merton short-rate model dr = beta dt + sigma (lambda dt + dW)."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return AffineModelSpec(Family.MERTON, [beta], [[0.0]], [[sigma]], [lambda_], 0.0, [1.0],
                           t_star, {"beta": beta, "sigma": sigma, "lambda": lambda_})


def make_vasicek(beta: float, kappa: float, sigma: float, lambda_: float,
                 t_star: float = DEFAULT_T_STAR) -> AffineModelSpec:
    """Vasicek model dr = (beta - kappa r) dt + sigma (lambda dt + dW).

    ``kappa == 0`` returns the Merton family.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    if kappa == 0:
        return make_merton(beta, sigma, lambda_, t_star)
    return AffineModelSpec(Family.VASICEK, [beta], [[-kappa]], [[sigma]], [lambda_], 0.0, [1.0],
                           t_star, {"beta": beta, "kappa": kappa, "sigma": sigma, "lambda": lambda_})


def make_cir(beta: float, kappa: float, sigma: float, lambda_bar: float,
             t_star: float = DEFAULT_T_STAR) -> AffineModelSpec:
    """CIR model dr = (beta - kappa r) dt + sigma sqrt(r) (lambda_bar sqrt(r) dt + dW).

    A violated Feller condition 2 beta >= sigma^2 only warns.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    feller = 2.0 * beta >= sigma ** 2
    if not feller:
        warnings.warn(f"Feller condition violated: 2*beta={2 * beta:g} < sigma^2={sigma ** 2:g}",
                      FellerWarning, stacklevel=2)
    return AffineModelSpec(Family.CIR, [beta], [[-kappa]], [[sigma]], [lambda_bar], 0.0, [1.0],
                           t_star, {"beta": beta, "kappa": kappa, "sigma": sigma,
                                    "lambda_bar": lambda_bar}, feller)


def cir_rho(kappa: float, sigma: float) -> float:
    return 0.5 * math.sqrt(kappa ** 2 + 2.0 * sigma ** 2)


def make_g2pp(kappa1: float, kappa2: float, sigma1: float, sigma2: float, rho: float,
              lambda1: float, lambda2: float, phi: float = 0.0,
              t_star: float = DEFAULT_T_STAR, allow_degenerate: bool = False) -> AffineModelSpec:
    """G2++: r = phi + Y1 + Y2 with two correlated Ornstein-Uhlenbeck factors.

    Sigma is the lower-triangular [[s1, 0], [rho s2, s2 sqrt(1 - rho^2)]].
    ``allow_degenerate`` admits sigma2 == 0 (used for the one-factor reduction).
    """
    if abs(rho) >= 1:
        raise ValueError("|rho| must be < 1")
    if not sigma1 > 0 or sigma2 < 0 or (sigma2 == 0 and not allow_degenerate):
        raise ValueError("volatilities must be positive")
    if kappa1 < 0 or kappa2 < 0:
        raise ValueError("mean reversion speeds must be nonnegative")
    sig = np.array([[sigma1, 0.0], [rho * sigma2, sigma2 * math.sqrt(1.0 - rho ** 2)]])
    params = {"kappa1": kappa1, "kappa2": kappa2, "sigma1": sigma1, "sigma2": sigma2,
              "rho": rho, "lambda1": lambda1, "lambda2": lambda2, "phi": phi}
    return AffineModelSpec(Family.G2PP, [0.0, 0.0], np.diag([-kappa1, -kappa2]), sig,
                           [lambda1, lambda2], phi, [1.0, 1.0], t_star, params)


def make_gaussian_affine(b1, b2, sigma, lambda_, phi1, phi2, t_star: float = DEFAULT_T_STAR,
                         check_ellipticity: bool = True) -> AffineModelSpec:
    """Generic constant-coefficient Gaussian affine model."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if check_ellipticity:
        _check_ellipticity(sigma)
    b2 = np.atleast_2d(np.asarray(b2, dtype=float))
    params = {"b1": np.ravel(b1).tolist(), "b2": b2.tolist(), "sigma": sigma.tolist(),
              "lambda": np.ravel(lambda_).tolist(), "phi1": float(phi1),
              "phi2": np.ravel(phi2).tolist(), "check_ellipticity": check_ellipticity}
    return AffineModelSpec(Family.GAUSSIAN_AFFINE, np.ravel(b1), b2, sigma, np.ravel(lambda_),
                           float(phi1), np.ravel(phi2), t_star, params)


_CONSTRUCTORS = {
    Family.MERTON: make_merton,
    Family.VASICEK: make_vasicek,
    Family.CIR: make_cir,
    Family.G2PP: make_g2pp,
    Family.GAUSSIAN_AFFINE: make_gaussian_affine,
}


def spec_to_dict(spec: AffineModelSpec) -> dict:
    return {"family": spec.family.value, "params": dict(spec.params), "t_star": spec.t_star}


def spec_from_dict(doc: dict) -> AffineModelSpec:
    """Build a spec from ``{"family", "params", "t_star"}``."""
    try:
        family = Family(str(doc["family"]).lower())
    except (KeyError, ValueError) as exc:
        raise ValueError(f"unknown or missing model family: {doc.get('family')!r}") from exc
    params: dict[str, Any] = dict(doc.get("params", {}))
    if "lambda" in params:
        params["lambda_"] = params.pop("lambda")
    t_star = float(doc.get("t_star", DEFAULT_T_STAR))
    try:
        return _CONSTRUCTORS[family](**params, t_star=t_star)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {family.value}: {exc}") from exc


def spec_to_json(spec: AffineModelSpec) -> str:
    return json.dumps(spec_to_dict(spec), sort_keys=True)


def spec_from_json(text: str) -> AffineModelSpec:
    return spec_from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# bond coefficients


def _check_maturity(spec: AffineModelSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > spec.t_star * (1 + 1e-12)):
        raise ValueError(f"time to maturity outside [0, {spec.t_star}]")
    return x


def cir_affine_exponent(q: float, kappa: float, beta: float, sigma: float, tau):
    """E exp(-q int_0^tau r) = exp(A(tau) - B(tau) r0) for CIR with drift beta - kappa r.

    Returns (A, B). Written in terms of exp(-h tau) so that long horizons do
    not overflow.
    """
    tau = np.asarray(tau, dtype=float)
    h2 = kappa ** 2 + 2.0 * q * sigma ** 2
    if h2 <= 0:
        raise ValueError("CIR exponent has no real solution for these parameters")
    h = math.sqrt(h2)
    e = np.exp(-h * tau)
    den = (h + kappa) * (1.0 - e) + 2.0 * h * e
    if np.any(den <= 0):
        raise ValueError("CIR exponent explodes before the requested horizon")
    B = 2.0 * q * (1.0 - e) / den
    A = (2.0 * beta / sigma ** 2) * (np.log(2.0 * h) + 0.5 * (kappa - h) * tau - np.log(den))
    return A, B


def bond_n(spec: AffineModelSpec, x) -> np.ndarray:
    """Affine exposure n(x), shape (..., n); P = exp(m(x) - <n(x), y>)."""
    x = _check_maturity(spec, x)
    fam = spec.family
    if fam is Family.CIR:
        p = spec.params
        _, B = cir_affine_exponent(1.0, p["kappa"], p["beta"], p["sigma"], x)
        return B[..., None]
    if spec.b2_diagonal:
        d = np.diag(spec.b2)
        return x[..., None] * phi(1, x[..., None] * d) * spec.phi2
    flat = integrated_exponential(spec.b2.T, spec.phi2, np.ravel(x))
    return flat.reshape(x.shape + (spec.dim_factor,))


def _vasicek_m(beta, kappa, sigma, x):
    z = -kappa * x
    int_n = x ** 2 * phi(2, z)
    int_n2 = 2.0 * x ** 3 * (2.0 * phi(3, 2.0 * z) - phi(3, z))
    return -beta * int_n + 0.5 * sigma ** 2 * int_n2


def bond_m_quadrature(spec: AffineModelSpec, x: float) -> float:
    """m(x) = -phi1 x - int_0^x <b1, n> + 1/2 int_0^x n' Q n by adaptive quadrature."""
    q = spec.sigma @ spec.sigma.T

    def integrand(v):
        nv = bond_n(spec, v)
        return -spec.phi1 - spec.b1 @ nv + 0.5 * nv @ q @ nv

    val, _ = integrate.quad(integrand, 0.0, float(x), epsabs=1e-13, epsrel=1e-10, limit=200)
    return val


def bond_m(spec: AffineModelSpec, x):
    """Affine intercept m(x) of the zero-coupon price."""
    x = _check_maturity(spec, x)
    p = spec.params
    if spec.family is Family.CIR:
        A, _ = cir_affine_exponent(1.0, p["kappa"], p["beta"], p["sigma"], x)
        return A
    if spec.family is Family.MERTON:
        return _vasicek_m(p["beta"], 0.0, p["sigma"], x)
    if spec.family is Family.VASICEK:
        return _vasicek_m(p["beta"], p["kappa"], p["sigma"], x)
    out = np.vectorize(lambda v: bond_m_quadrature(spec, v), otypes=[float])(x)
    return out if out.ndim else float(out)


def bond_price(spec: AffineModelSpec, x, y) -> np.ndarray:
    """P(t)(x) = exp(m(x) - <n(x), y>)."""
    y = np.asarray(y, dtype=float)
    return np.exp(bond_m(spec, x) - (bond_n(spec, x) * y).sum(axis=-1))


def rolling_bond_vol(spec: AffineModelSpec, x, y=None) -> np.ndarray:
    """Rolling-bond volatility sigma_tilde(x) = Sigma^T n(x), shape (..., m).

    For CIR the sqrt(r) factor is applied only when a state ``y`` is given.
    """
    nx = bond_n(spec, x)
    sig = spec.sigma if y is None else spec.diffusion_at(y)
    return (sig * nx[..., :, None]).sum(axis=-2)


@dataclass(frozen=True)
class BondCoeffs:
    """n(x), m(x) as callables on [0, max_maturity]."""

    spec: AffineModelSpec

    @property
    def max_maturity(self) -> float:
        return self.spec.t_star

    def n_fn(self, x):
        return bond_n(self.spec, x)

    def m_fn(self, x):
        return bond_m(self.spec, x)


def bond_coeffs(spec: AffineModelSpec) -> BondCoeffs:
    return BondCoeffs(spec)
