"""
Optimal consumption and rolling-bond portfolios.

A portfolio is a finitely supported signed measure psi = sum_k eta_k delta_{x_k}
on times to maturity. Its diffusion exposure is

    A(psi) = -Sigma(y)^T sum_k eta_k n(x_k),

and the optimal portfolio matches A(psi) to the target

    lambda / (1 - alpha) + Sigma^T D_y G / G

under the budget constraint sum_k eta_k = 1. Optimal consumption is
c = a^{1/(1-alpha)} / G.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from hjmport._numerics import phi
from hjmport.gfunction import GKernel, GValue
from hjmport.models import AffineModelSpec, Family, UtilityParams, bond_n

RANK_RTOL = 1e-10


class RankDeficient(np.linalg.LinAlgError):
    """The maturities cannot span the target exposure."""

    def __init__(self, maturities, rank, needed):
        self.maturities = tuple(float(x) for x in maturities)
        self.rank = rank
        self.needed = needed
        super().__init__(
            f"augmented exposure matrix for maturities {list(self.maturities)} has rank {rank} < {needed}; "
            "add or change maturities")


@dataclass
class PortfolioMeasure:
    """Signed point-mass measure sum_k weights[k] * delta_{maturities[k]}."""

    maturities: np.ndarray
    weights: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.maturities = np.asarray(self.maturities, dtype=float).ravel()
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.maturities.shape != self.weights.shape:
            raise ValueError("one weight per maturity")
        if np.unique(self.maturities).size != self.maturities.size:
            raise ValueError("maturities must be distinct")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1 (got {self.weights.sum():.17g})")

    @classmethod
    def dirac(cls, x: float) -> "PortfolioMeasure":
        return cls([x], [1.0])

    @property
    def atoms(self):
        return list(zip(self.maturities.tolist(), self.weights.tolist()))


@dataclass
class TargetExposure:
    """Target diffusion exposure split into myopic and hedging parts."""

    risk_term: np.ndarray
    hedge_term: np.ndarray

    @property
    def vec(self) -> np.ndarray:
        return self.risk_term + self.hedge_term


def default_maturities(spec: AffineModelSpec) -> np.ndarray:
    """{0, T*/4, T*/2, T*}, extended evenly when there are more than three noises."""
    ts = spec.t_star
    if spec.dim_noise <= 3:
        return np.array([0.0, ts / 4, ts / 2, ts])
    return np.linspace(0.0, ts, spec.dim_noise + 2)


def exposure_operator(spec: AffineModelSpec, psi: PortfolioMeasure, t: float, y) -> np.ndarray:
    """A(psi) = -Sigma(y)^T sum_k eta_k n(x_k), shape (m,)."""
    y = np.asarray(y, dtype=float).reshape(spec.dim_factor)
    ncols = bond_n(spec, psi.maturities)
    return -(spec.diffusion_at(y).T @ (ncols.T @ psi.weights))


@dataclass
class FMatrix:
    """Exposure columns F (m x l) for a maturity set, with its augmented form.

    ``F_aug`` stacks a row of ones under F. ``rank`` comes from a pivoted
    QR with tolerance 1e-10 * ||F_aug||.
    """

    maturities: np.ndarray
    F: np.ndarray
    F_aug: np.ndarray
    rank: int
    scale: float = 1.0
    spec: AffineModelSpec | None = field(default=None, repr=False)

    @property
    def needed(self) -> int:
        return self.F.shape[0] + 1

    @property
    def full_rank(self) -> bool:
        return self.rank >= self.needed

    @property
    def bank_index(self):
        hit = np.flatnonzero(self.maturities == 0.0)
        return int(hit[0]) if hit.size else None


def _rank(mat: np.ndarray) -> int:
    norm = np.linalg.norm(mat, 2)
    if norm == 0:
        return 0
    r = linalg.qr(mat, mode="r", pivoting=True)[0]
    d = np.abs(np.diag(r))
    return int((d > RANK_RTOL * norm).sum())


def _columns(spec: AffineModelSpec, maturities: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return -(sigma.T @ bond_n(spec, maturities).T)


def build_f_matrix(spec: AffineModelSpec, t: float, y, maturities) -> FMatrix:
    """F(t, y, x) with columns Sigma^T D_y log F = -Sigma^T n(x_k).

    Duplicate maturities are not rejected here; they show up as a rank
    deficit so callers can report it.
    """
    x = np.asarray(maturities, dtype=float).ravel()
    if x.size < spec.dim_noise + 1:
        raise ValueError(f"need at least {spec.dim_noise + 1} maturities")
    y = np.asarray(y, dtype=float).reshape(spec.dim_factor)
    F = _columns(spec, x, spec.diffusion_at(y))
    F_aug = np.vstack([F, np.ones(x.size)])
    return FMatrix(x, F, F_aug, _rank(F_aug), spec=spec)


class StrategySolver:
    """Batched solver for [F; 1] eta = [target; 1] on a fixed maturity set.

    With the bank account among the maturities the minimum-norm solution
    is taken over the bond weights and the bank absorbs the rest of the
    budget (so a zero target gives delta_0); otherwise the minimum-norm
    solution of the full augmented system is used. A model without
    diffusion cannot carry exposure, and the whole budget goes to the
    shortest maturity. For CIR the columns
    scale with sqrt(r), so the solver works with targets divided by
    sqrt(r).
    """

    def __init__(self, spec: AffineModelSpec, maturities):
        self.spec = spec
        self.maturities = np.asarray(maturities, dtype=float).ravel()
        unit = np.ones(spec.dim_factor) if spec.family is Family.CIR else np.zeros(spec.dim_factor)
        self.fm = build_f_matrix(spec, 0.0, unit, self.maturities)
        # without diffusion every portfolio has zero exposure; hold the shortest maturity
        self.degenerate = not np.any(spec.sigma)
        bank = self.fm.bank_index
        self.bank = bank
        if self.degenerate:
            self.bank = int(np.argmin(self.maturities))
            self._keep = np.arange(self.maturities.size) != self.bank
            self._pinv = np.zeros((self.maturities.size - 1, spec.dim_noise))
            return
        if not self.fm.full_rank:
            raise RankDeficient(self.maturities, self.fm.rank, self.fm.needed)
        if bank is not None:
            keep = np.arange(self.maturities.size) != bank
            self._keep = keep
            self._pinv = np.linalg.pinv(self.fm.F[:, keep], rcond=1e-13)
        else:
            self._pinv = np.linalg.pinv(self.fm.F_aug, rcond=1e-13)

    def solve(self, target) -> np.ndarray:
        """Weights (N, l) for reduced targets of shape (N, m)."""
        target = np.atleast_2d(np.asarray(target, dtype=float))
        n = target.shape[0]
        out = np.empty((n, self.maturities.size))
        if self.bank is not None:
            bonds = (target[:, None, :] * self._pinv[None, :, :]).sum(axis=-1)
            out[:, self._keep] = bonds
            out[:, self.bank] = 1.0 - bonds.sum(axis=1)
        else:
            rhs = np.concatenate([target, np.ones((n, 1))], axis=1)
            out[:] = (rhs[:, None, :] * self._pinv[None, :, :]).sum(axis=-1)
        return out

    def exposure(self, weights) -> np.ndarray:
        """Reduced exposure F eta for weights of shape (N, l)."""
        weights = np.atleast_2d(weights)
        return (weights[:, None, :] * self.fm.F[None, :, :]).sum(axis=-1)


def solve_strategy(F_aug: FMatrix, target: TargetExposure, t: float = 0.0) -> PortfolioMeasure:
    """Portfolio with A(psi) = target and unit total weight.

    Exact when there are m + 1 maturities, minimum norm otherwise (over the
    bond weights when the bank account is present).
    """
    fm = F_aug
    if not fm.full_rank:
        raise RankDeficient(fm.maturities, fm.rank, fm.needed)
    vec = np.asarray(target.vec if isinstance(target, TargetExposure) else target, dtype=float)
    bank = fm.bank_index
    if bank is not None:
        keep = np.arange(fm.maturities.size) != bank
        bonds, *_ = np.linalg.lstsq(fm.F[:, keep], vec, rcond=None)
        w = np.empty(fm.maturities.size)
        w[keep] = bonds
        w[bank] = 1.0 - bonds.sum()
    else:
        w, *_ = np.linalg.lstsq(fm.F_aug, np.append(vec, 1.0), rcond=None)
    return PortfolioMeasure(fm.maturities, w, t)


# ---------------------------------------------------------------------------
# optimal controls


def optimal_consumption(gvalue: GValue | float, util: UtilityParams) -> float:
    """c = a^{1/(1-alpha)} / G; zero when a = 0."""
    G = gvalue.value if isinstance(gvalue, GValue) else float(gvalue)
    if not G > 0:
        raise ValueError("G must be positive")
    if util.a == 0:
        return 0.0
    return util.a_weight / G


def optimal_target(spec: AffineModelSpec, util: UtilityParams, gvalue: GValue, t: float, y) -> TargetExposure:
    """lambda(y)/(1-alpha) + Sigma(y)^T D_y G / G."""
    y = np.asarray(y, dtype=float).reshape(spec.dim_factor)
    risk = spec.lambda_at(y) / (1.0 - util.alpha)
    hedge = spec.diffusion_at(y).T @ gvalue.grad_over_g
    return TargetExposure(np.asarray(risk, dtype=float), hedge)


def vasicek_two_asset(spec: AffineModelSpec, util: UtilityParams, gvalue: GValue, x_bar: float) -> PortfolioMeasure:
    """Closed form on {0, x_bar}:
    eta_x = kappa/(1 - e^{-kappa x}) [lambda/((alpha-1) sigma) - G_r/G].
    """
    if spec.family not in (Family.VASICEK, Family.MERTON):
        raise ValueError("needs a Vasicek or Merton model")
    kappa = spec.params.get("kappa", 0.0)
    sigma, lam = spec.params["sigma"], spec.params["lambda"]
    n_bar = x_bar * phi(1, -kappa * x_bar)
    eta = (lam / ((util.alpha - 1.0) * sigma) - gvalue.grad_over_g[0]) / n_bar
    return PortfolioMeasure([0.0, x_bar], [1.0 - eta, eta], gvalue.t)


def g2pp_three_asset(spec: AffineModelSpec, util: UtilityParams, gvalue: GValue,
                     x1: float, x2: float) -> PortfolioMeasure:
    """Closed form on {0, x1, x2}:
    (eta_1, eta_2) = M^{-1} [Sigma^{-T} lambda/(alpha-1) - D_y G/G], M_ij = n_i(x_j).
    """
    if spec.family is not Family.G2PP:
        raise ValueError("needs a G2++ model")
    M = bond_n(spec, np.array([x1, x2])).T
    rhs = np.linalg.solve(spec.sigma.T, spec.lam) / (util.alpha - 1.0) - gvalue.grad_over_g
    eta = np.linalg.solve(M, rhs)
    return PortfolioMeasure([0.0, x1, x2], [1.0 - eta.sum(), eta[0], eta[1]], gvalue.t)


# ---------------------------------------------------------------------------
# policies for simulation


@dataclass
class PolicyStep:
    """Controls at one time for N paths: exposure A (N, m), consumption C (N,),
    weights (N, l)."""

    exposure: np.ndarray
    consumption: np.ndarray
    weights: np.ndarray


class OptimalPolicy:
    """Feedback policy (psi_hat, C_hat) from the kernel G."""

    def __init__(self, spec: AffineModelSpec, util: UtilityParams, maturities=None,
                 kernel: GKernel | None = None, y_ref=None, label: str = "optimal"):
        self.spec, self.util = spec, util
        self.kernel = kernel or GKernel(spec, util, y_ref=y_ref)
        self.maturities = default_maturities(spec) if maturities is None else np.asarray(maturities, float)
        self.solver = StrategySolver(spec, self.maturities)
        self.label = label
        self.candidate = self.kernel.candidate
        # with b = 0, G(T, y) = 0 and C_hat blows up like 1/(T - t)
        self.singular_at_horizon = not util.infinite and util.b_weight == 0.0

    def __call__(self, t: float, y: np.ndarray) -> PolicyStep:
        spec = self.spec
        G, grad = self.kernel.evaluate(t, y)
        gog = grad / G[:, None]
        C = np.full(G.shape, 0.0) if self.util.a == 0 else self.util.a_weight / G
        if spec.family is Family.CIR:
            # everything scales with sqrt(r); solve in reduced units
            red = spec.lam / (1.0 - self.util.alpha) + gog * spec.sigma[0, 0]
            w = self.solver.solve(red)
            root = np.sqrt(np.clip(y[:, 0], 0.0, None))
            A = self.solver.exposure(w) * root[:, None]
        else:
            target = spec.lam / (1.0 - self.util.alpha) + (gog[:, :, None] * spec.sigma[None, :, :]).sum(axis=1)
            w = self.solver.solve(target)
            A = self.solver.exposure(w)
        return PolicyStep(A, C, w)


class ConstantPolicy:
    """Fixed portfolio measure with constant consumption rate."""

    def __init__(self, spec: AffineModelSpec, measure: PortfolioMeasure, consumption: float = 0.0,
                 label: str | None = None):
        if consumption < 0:
            raise ValueError("consumption must be nonnegative")
        self.spec = spec
        self.measure = measure
        self.c = float(consumption)
        self.maturities = measure.maturities
        self.label = label or "const[" + ";".join(f"{w:g}@{x:g}" for x, w in measure.atoms) + f"|c={self.c:g}]"
        self.candidate = False
        self._cols = _columns(spec, measure.maturities, spec.sigma) @ measure.weights

    def __call__(self, t: float, y: np.ndarray) -> PolicyStep:
        n = y.shape[0]
        A = np.broadcast_to(self._cols, (n, self._cols.size)).copy()
        if self.spec.family is Family.CIR:
            A *= np.sqrt(np.clip(y[:, 0], 0.0, None))[:, None]
        return PolicyStep(A, np.full(n, self.c), np.broadcast_to(self.measure.weights, (n, self.measure.weights.size)))


def hamiltonian(spec: AffineModelSpec, util: UtilityParams, K: float, gradK: np.ndarray, y, c: float,
                A: np.ndarray) -> float:
    """Control-dependent part of the HJB Hamiltonian per unit z^alpha for V = K z^alpha / alpha:

        -K c + (a/alpha) c^alpha + ||A||^2 (alpha-1) K / 2 + <A, lambda K + Sigma^T D K>.

    Concave in (c, A) for either sign of alpha; the optimal pair maximizes it.
    """
    y = np.asarray(y, dtype=float).reshape(spec.dim_factor)
    A = np.asarray(A, dtype=float)
    lin = spec.lambda_at(y) * K + spec.diffusion_at(y).T @ gradK
    al = util.alpha
    cons = -K * c + (util.a / al) * c ** al if c > 0 else (0.0 if al > 0 else -math.inf)
    if util.a == 0:
        cons = -K * c
    return cons + float(A @ A) * (al - 1.0) * K / 2.0 + float(A @ lin)
