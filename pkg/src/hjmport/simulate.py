"""
Monte Carlo simulation of factor, rolling-bond and wealth dynamics.

Every path draws its normals from its own counter-based stream (Philox keyed
by (seed, path index)), and paths are processed in fixed-size blocks whose
results are concatenated in path order, so the output does not depend on the
number of worker threads.

Factor schemes
--------------
exact_gaussian
    Exact transition of the linear SDE with constant coefficients, sampled
    jointly with the Wiener increment that drives the wealth.
euler_log
    Euler factor step.
cir_full_truncation
    Euler with the state floored at zero inside the square root.

Wealth is advanced in log form with trapezoidal drift and left-point noise:

    log z += 1/2 (d_k + d_{k+1}) dt + <A_k, dW_k>,
    d = r - C + <A, lambda> - |A|^2 / 2.
"""

from __future__ import annotations

import csv
import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from hjmport._numerics import psd_sqrt
from hjmport.gfunction import GKernel
from hjmport.models import AffineModelSpec, Family, UtilityParams, bond_m, bond_n, rolling_bond_vol
from hjmport.strategy import PolicyStep

THREADS_ENV = "HJMPORT_THREADS"
MAX_CELLS = 2 * 10 ** 8


class Scheme(str, enum.Enum):
    AUTO = "auto"
    EXACT_GAUSSIAN = "exact_gaussian"
    EULER_LOG = "euler_log"
    CIR_FULL_TRUNCATION = "cir_full_truncation"


class SimulationError(RuntimeError):
    """A simulation produced non-finite values or was misconfigured."""


def default_workers() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class SimConfig:
    """Monte Carlo settings.

    ``horizon`` is T, or the truncation point S on the infinite horizon.
    The grid has round(horizon / dt) steps (dt is adjusted to fit exactly).
    ``workers`` only affects speed; results are identical for any value.
    """

    n_paths: int = 10_000
    dt: float = 1.0 / 252.0
    horizon: float = 1.0
    seed: int = 0
    scheme: Scheme = Scheme.AUTO
    block_size: int = 1024
    workers: int | None = None
    store_paths: bool = True

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")
        if not (self.dt > 0 and self.horizon > 0) or self.dt > self.horizon * (1 + 1e-12):
            raise ValueError("need 0 < dt <= horizon")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    @property
    def step(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    def resolved_workers(self) -> int:
        return self.workers if self.workers else default_workers()

    def blocks(self):
        for start in range(0, self.n_paths, self.block_size):
            yield np.arange(start, min(start + self.block_size, self.n_paths))


def path_normals(seed: int, path_id: int, n_steps: int, width: int) -> np.ndarray:
    """Standard normals of shape (n_steps, width) for one path.

    The stream is keyed by (seed, path_id), and normals are drawn in step
    order, so a longer horizon extends a path without changing its start.
    """
    ss = np.random.SeedSequence(seed, spawn_key=(int(path_id),))
    gen = np.random.Generator(np.random.Philox(ss))
    return gen.standard_normal((n_steps, width))


# ---------------------------------------------------------------------------
# factor stepping


class _FactorStepper:
    """One-step map of the factor under drift b1 + b2 y + w Sigma(y) lambda(y)."""

    def __init__(self, spec: AffineModelSpec, lambda_weight: float, scheme: Scheme, dt: float):
        if scheme is Scheme.AUTO:
            scheme = Scheme.CIR_FULL_TRUNCATION if spec.family is Family.CIR else Scheme.EXACT_GAUSSIAN
        if (spec.family is Family.CIR) != (scheme is Scheme.CIR_FULL_TRUNCATION):
            raise SimulationError(f"scheme {scheme.value} does not apply to family {spec.family.value}")
        self.spec, self.w, self.scheme, self.dt = spec, lambda_weight, scheme, dt
        n, m = spec.dim_factor, spec.dim_noise
        self.width = m + n
        self.sqdt = math.sqrt(dt)
        if spec.family is Family.CIR:
            return
        c = spec.b1 + lambda_weight * (spec.sigma @ spec.lam)
        self.c = c
        if scheme is Scheme.EXACT_GAUSSIAN:
            aug = np.zeros((n + 1, n + 1))
            aug[:n, :n] = spec.b2
            aug[:n, n] = c
            e = linalg.expm(dt * aug)
            self.trans = e[:n, :n]
            self.shift = e[:n, n]
            # int_0^dt e^{b2 u} du via the same augmented exponential
            big = np.zeros((2 * n, 2 * n))
            big[:n, :n] = spec.b2
            big[:n, n:] = np.eye(n)
            phi1 = linalg.expm(dt * big)[:n, n:]
            K = phi1 @ spec.sigma
            q = spec.sigma @ spec.sigma.T
            vl = np.zeros((2 * n, 2 * n))
            vl[:n, :n] = -spec.b2
            vl[:n, n:] = q
            vl[n:, n:] = spec.b2.T
            ev = linalg.expm(dt * vl)
            V = ev[n:, n:].T @ ev[:n, n:]
            self.K = K / self.sqdt
            self.L = psd_sqrt(V - K @ K.T / dt)

    def advance(self, y: np.ndarray, z: np.ndarray):
        """Return (y_next, dW) for normals z of shape (B, m + n)."""
        spec = self.spec
        m = spec.dim_noise
        z1, z2 = z[:, :m], z[:, m:]
        dW = self.sqdt * z1
        if spec.family is Family.CIR:
            r = y[:, 0]
            rp = np.clip(r, 0.0, None)
            p = spec.params
            drift = p["beta"] - p["kappa"] * r + self.w * p["sigma"] * p["lambda_bar"] * rp
            nxt = r + drift * self.dt + p["sigma"] * np.sqrt(rp) * dW[:, 0]
            return nxt[:, None], dW
        if self.scheme is Scheme.EXACT_GAUSSIAN:
            mean = (y[:, None, :] * self.trans[None, :, :]).sum(axis=-1) + self.shift
            noise = ((z1[:, None, :] * self.K[None, :, :]).sum(axis=-1)
                     + (z2[:, None, :] * self.L[None, :, :]).sum(axis=-1))
            return mean + noise, dW
        drift = self.c + (y[:, None, :] * spec.b2[None, :, :]).sum(axis=-1)
        diff = (dW[:, None, :] * spec.sigma[None, :, :]).sum(axis=-1)
        return y + drift * self.dt + diff, dW


def _observe(spec: AffineModelSpec, y: np.ndarray) -> np.ndarray:
    """Reported state: CIR paths are shown after truncation at zero."""
    return np.clip(y, 0.0, None) if spec.family is Family.CIR else y


# ---------------------------------------------------------------------------
# results


@dataclass
class SimRun:
    """Path ensemble. Arrays are indexed (path, time[, component]).

    ``reward`` holds per-path reward functionals when a utility was given.
    """

    config: SimConfig
    times: np.ndarray
    y: np.ndarray | None = None
    z: np.ndarray | None = None
    consumption: np.ndarray | None = None
    weights: np.ndarray | None = None
    maturities: np.ndarray | None = None
    y_final: np.ndarray | None = None
    z_final: np.ndarray | None = None
    reward: np.ndarray | None = None
    integrand_mean: np.ndarray | None = None
    candidate: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def short_rate_paths(self):
        return self.extra.get("r")


def _run_blocks(config: SimConfig, fn):
    blocks = list(config.blocks())
    workers = min(config.resolved_workers(), len(blocks))
    if workers <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, blocks))


def _check_budget(config: SimConfig, width: int):
    if config.store_paths and config.n_paths * (config.n_steps + 1) * width > MAX_CELLS:
        raise SimulationError("requested path storage exceeds the memory budget; set store_paths=False")


def _simulate_factor(spec, y0, config, lambda_weight):
    y0 = np.asarray(y0, dtype=float).reshape(spec.dim_factor)
    stepper = _FactorStepper(spec, lambda_weight, config.scheme, config.step)
    ns, n = config.n_steps, spec.dim_factor
    _check_budget(config, n)

    def block(ids):
        Z = np.stack([path_normals(config.seed, i, ns, stepper.width) for i in ids])
        y = np.tile(y0, (ids.size, 1))
        out = np.empty((ids.size, ns + 1, n)) if config.store_paths else None
        if out is not None:
            out[:, 0] = _observe(spec, y)
        for k in range(ns):
            y, _ = stepper.advance(y, Z[:, k])
            if out is not None:
                out[:, k + 1] = _observe(spec, y)
        return out, _observe(spec, y)

    parts = _run_blocks(config, block)
    paths = np.concatenate([p[0] for p in parts]) if config.store_paths else None
    final = np.concatenate([p[1] for p in parts])
    if not np.all(np.isfinite(final)):
        raise SimulationError("factor simulation produced non-finite values")
    return SimRun(config, config.times, y=paths, y_final=final)


def simulate_factor(spec: AffineModelSpec, y0, config: SimConfig) -> SimRun:
    """Factor paths under the physical measure."""
    return _simulate_factor(spec, y0, config, 1.0)


def simulate_tilde_factor(spec: AffineModelSpec, util: UtilityParams, y0, config: SimConfig) -> SimRun:
    """Factor paths under the Feynman-Kac dynamics with drift b1 + b2 y + Sigma lambda / (1 - alpha)."""
    return _simulate_factor(spec, y0, config, 1.0 / (1.0 - util.alpha))


def simulate_martingale_factor(spec: AffineModelSpec, y0, config: SimConfig) -> SimRun:
    """Factor paths under the martingale measure (lambda dropped from the drift)."""
    return _simulate_factor(spec, y0, config, 0.0)


# ---------------------------------------------------------------------------
# wealth


def simulate_wealth(spec: AffineModelSpec, util: UtilityParams | None, policy, z0: float, y0,
                    config: SimConfig) -> SimRun:
    """Wealth and factor paths under a feedback policy.

    ``policy(t, y)`` returns a :class:`~hjmport.strategy.PolicyStep` for
    states of shape (B, n). When ``util`` is given, each path also carries
    its reward functional (see :func:`estimate_reward_finite`).
    """
    if not z0 > 0:
        raise ValueError("initial wealth must be positive")
    y0 = np.asarray(y0, dtype=float).reshape(spec.dim_factor)
    stepper = _FactorStepper(spec, 1.0, config.scheme, config.step)
    ns, dt, n = config.n_steps, config.step, spec.dim_factor
    times = config.times
    nl = len(getattr(policy, "maturities", [])) or None
    _check_budget(config, n + 3 + (nl or 0))
    if util is not None:
        al, disc = util.alpha, np.exp(-util.gamma * times)
    hold_last = (bool(getattr(policy, "singular_at_horizon", False)) and util is not None and not util.infinite
                 and getattr(policy, "kernel", None) is not None)

    def drift_of(y, step):
        lam = spec.lambda_at(y)
        return (spec.short_rate(y) - step.consumption + (step.exposure * lam).sum(axis=1)
                - 0.5 * (step.exposure ** 2).sum(axis=1))

    def utility_flow(k, step, logz):
        c = step.consumption
        with np.errstate(divide="ignore"):
            return util.a * disc[k] * np.where(c > 0, np.exp(al * (np.log(np.where(c > 0, c, 1.0)) + logz)),
                                      0.0 if al > 0 else np.inf)

    def block(ids):
        B = ids.size
        Z = np.stack([path_normals(config.seed, i, ns, stepper.width) for i in ids])
        y = np.tile(y0, (B, 1))
        logz = np.full(B, math.log(z0))
        step = policy(0.0, _observe(spec, y))
        d = drift_of(_observe(spec, y), step)
        store = config.store_paths
        if store:
            Y = np.empty((B, ns + 1, n))
            LZ = np.empty((B, ns + 1))
            CC = np.empty((B, ns + 1))
            WW = np.empty((B, ns + 1, step.weights.shape[1])) if step.weights is not None else None
        reward = np.zeros(B)
        flow_sum = np.zeros(ns + 1)
        u = None
        if util is not None and util.a > 0:
            u = utility_flow(0, step, logz)
            flow_sum[0] = u.sum()
        for k in range(ns + 1):
            if store:
                Y[:, k] = _observe(spec, y)
                LZ[:, k] = logz
                CC[:, k] = step.consumption
                if WW is not None:
                    WW[:, k] = step.weights
            if k == ns:
                break
            y_next, dW = stepper.advance(y, Z[:, k])
            obs = _observe(spec, y_next)
            last_singular = k + 1 == ns and hold_last
            if last_singular:
                # C_hat is singular at T: the last step's reward is the exact value-to-go
                # e^{-gamma t} G^{1-alpha} z^alpha, and wealth moves with the controls held
                if u is not None:
                    G_k, _ = policy.kernel.evaluate(times[k], _observe(spec, y))
                    reward += disc[k] * G_k ** (1.0 - al) * np.exp(al * logz)
                nxt = PolicyStep(step.exposure, step.consumption, step.weights)
                d_next = d
            else:
                nxt = policy(times[k + 1], obs)
                d_next = drift_of(obs, nxt)
            logz = logz + 0.5 * (d + d_next) * dt + (step.exposure * dW).sum(axis=1)
            if last_singular:
                if u is not None:
                    flow_sum[k + 1] = utility_flow(k + 1, nxt, logz).sum()
            elif u is not None:
                u_next = utility_flow(k + 1, nxt, logz)
                reward += 0.5 * dt * (u + u_next)
                flow_sum[k + 1] = u_next.sum()
                u = u_next
            y, step, d = y_next, nxt, d_next
        if util is not None:
            if not util.infinite and util.b > 0:
                reward = reward + util.b * disc[ns] * np.exp(al * logz)
        res = {"y_final": _observe(spec, y), "logz_final": logz, "reward": reward, "flow_sum": flow_sum}
        if store:
            res.update(Y=Y, LZ=LZ, C=CC, W=WW)
        return res

    parts = _run_blocks(config, block)
    cat = lambda key: np.concatenate([p[key] for p in parts])  # noqa: E731
    logz_final = cat("logz_final")
    if not np.all(np.isfinite(logz_final)):
        raise SimulationError("wealth simulation produced non-finite values")
    run = SimRun(config, times, y_final=cat("y_final"), z_final=np.exp(logz_final),
                 maturities=getattr(policy, "maturities", None),
                 candidate=bool(getattr(policy, "candidate", False)))
    if util is not None:
        run.reward = cat("reward") / util.alpha
        run.integrand_mean = np.sum([p["flow_sum"] for p in parts], axis=0) / (util.alpha * config.n_paths)
    if config.store_paths:
        run.y, run.z, run.consumption = cat("Y"), np.exp(cat("LZ")), cat("C")
        if parts[0]["W"] is not None:
            run.weights = cat("W")
    return run


def simulate_rolling_bond(spec: AffineModelSpec, x: float, y0, config: SimConfig) -> SimRun:
    """Rolling-bond price paths U(t)(x) with U(0) = 1.

    d log U = [r - <s, lambda> - |s|^2 / 2] dt - <s, dW>, s = Sigma(y)^T n(x),
    discretised exactly like :func:`simulate_wealth`.
    """
    nx = bond_n(spec, x)
    y0 = np.asarray(y0, dtype=float).reshape(spec.dim_factor)
    stepper = _FactorStepper(spec, 1.0, config.scheme, config.step)
    ns, dt = config.n_steps, config.step
    _check_budget(config, spec.dim_factor + 1)

    def vol(y):
        return (spec.diffusion_at(y) * nx[None, :, None]).sum(axis=1)

    def drift(y, s):
        return spec.short_rate(y) - (s * spec.lambda_at(y)).sum(axis=1) - 0.5 * (s ** 2).sum(axis=1)

    def block(ids):
        Z = np.stack([path_normals(config.seed, i, ns, stepper.width) for i in ids])
        y = np.tile(y0, (ids.size, 1))
        logu = np.zeros(ids.size)
        s = vol(y)
        d = drift(y, s)
        out = np.empty((ids.size, ns + 1))
        out[:, 0] = 0.0
        for k in range(ns):
            y_next, dW = stepper.advance(y, Z[:, k])
            s_next = vol(y_next)
            d_next = drift(y_next, s_next)
            logu = logu + 0.5 * (d + d_next) * dt - (s * dW).sum(axis=1)
            out[:, k + 1] = logu
            y, s, d = y_next, s_next, d_next
        return out

    logu = np.concatenate(_run_blocks(config, block))
    return SimRun(config, config.times, z=np.exp(logu), z_final=np.exp(logu[:, -1]),
                  extra={"maturity": float(x), "vol": rolling_bond_vol(spec, x)})


# ---------------------------------------------------------------------------
# bond drift diagnostics (martingale measure)


@dataclass
class DriftDiagnostic:
    """Sample drift of a discounted bond over [0, h] versus its theoretical value."""

    estimate: float
    stderr: float
    expected: float
    t_stat: float
    passed: bool


def _discounted_ratio(spec, x_end, x_start, y0, config):
    run = simulate_martingale_factor(spec, y0, config)
    r = spec.short_rate(run.y)
    integral = 0.5 * config.step * (r[:, 1:] + r[:, :-1]).sum(axis=1)
    p0 = float(np.exp(bond_m(spec, x_start) - bond_n(spec, x_start) @ np.asarray(y0, float)))
    ph = np.exp(bond_m(spec, x_end) - (bond_n(spec, x_end) * run.y[:, -1]).sum(axis=1))
    return np.exp(-integral) * ph / p0


def discounted_bond_martingale_test(spec: AffineModelSpec, x: float, y0, config: SimConfig,
                                    level: float = 0.01) -> DriftDiagnostic:
    """Discounted price of the bond maturing at x, held over [0, h] (h = horizon),
    should have zero drift under the martingale measure (two-sided t-test)."""
    from scipy import stats

    h = config.horizon
    if x < h:
        raise ValueError("bond must mature after the test horizon")
    ratio = _discounted_ratio(spec, x - h, x, y0, config)
    est = (ratio.mean() - 1.0) / h
    se = ratio.std(ddof=1) / math.sqrt(ratio.size) / h
    t = est / se if se > 0 else 0.0
    crit = stats.norm.ppf(1 - level / 2)
    return DriftDiagnostic(float(est), float(se), 0.0, float(t), bool(abs(t) <= crit))


def sliding_bond_drift(spec: AffineModelSpec, x: float, y0, config: SimConfig) -> DriftDiagnostic:
    """Discounted sliding bond P(t)(x) over [0, h]; its relative drift is
    -f(0)(x), the forward rate at time to maturity x (so it is not tradable)."""
    h = config.horizon
    ratio = _discounted_ratio(spec, x, x, y0, config)
    est = (ratio.mean() - 1.0) / h
    se = ratio.std(ddof=1) / math.sqrt(ratio.size) / h
    eps = 1e-5
    lo, hi = max(x - eps, 0.0), x + eps
    y0 = np.asarray(y0, float)
    logp = lambda v: float(bond_m(spec, v) - bond_n(spec, v) @ y0)  # noqa: E731
    fwd = -(logp(hi) - logp(lo)) / (hi - lo)
    t = (est + fwd) / se if se > 0 else 0.0
    return DriftDiagnostic(float(est), float(se), -fwd, float(t), bool(abs(t) <= 3.0))


# ---------------------------------------------------------------------------
# reward functionals


@dataclass
class RewardEstimate:
    """Monte Carlo estimate of a reward functional.

    On the infinite horizon ``mean`` is the truncated estimate on [0, S];
    ``tail`` estimates the rest and ``truncation_tail_bound`` is its size.
    ``tail_method`` is "analytic" (value function at S, optimal policy) or
    "empirical" (exponential fit of the mean flow).
    """

    mean: float
    stderr: float
    n_paths: int
    policy_label: str
    horizon: float
    truncation_tail_bound: float | None = None
    tail: float = 0.0
    tail_method: str | None = None
    total_stderr: float | None = None
    candidate: bool = False

    @property
    def total(self) -> float:
        return self.mean + self.tail


def _mean_se(x: np.ndarray):
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


def estimate_reward_finite(spec: AffineModelSpec, util: UtilityParams, policy, z0: float, y0,
                           config: SimConfig, run: SimRun | None = None) -> RewardEstimate:
    """(1/alpha) E[a int_0^T e^{-gamma t} (C z)^alpha dt + b e^{-gamma T} z_T^alpha],
    trapezoid in time, path average with its standard error."""
    if util.infinite:
        raise ValueError("use estimate_reward_infinite")
    if abs(config.horizon - util.horizon) > 1e-12:
        raise ValueError("simulation horizon must equal the utility horizon")
    run = run or simulate_wealth(spec, util, policy, z0, y0, config)
    mean, se = _mean_se(run.reward)
    return RewardEstimate(mean, se, config.n_paths, getattr(policy, "label", "policy"), util.horizon,
                          candidate=run.candidate)


def estimate_reward_infinite(spec: AffineModelSpec, util: UtilityParams, policy, z0: float, y0,
                             config: SimConfig, kernel: GKernel | None = None,
                             run: SimRun | None = None) -> RewardEstimate:
    """(1/alpha) E int_0^S e^{-gamma t} (C z)^alpha dt with a tail estimate.

    For the optimal policy (``kernel`` given) the tail is the discounted
    value function at S, path by path. Otherwise the mean flow is fitted by
    an exponential on the second half of [0, S]; a nondecreasing fit gives
    an infinite tail.
    """
    if not util.infinite:
        raise ValueError("use estimate_reward_finite")
    if kernel is None and getattr(policy, "kernel", None) is not None:
        kernel = policy.kernel
    run = run or simulate_wealth(spec, util, policy, z0, y0, config)
    mean, se = _mean_se(run.reward)
    S = config.horizon
    label = getattr(policy, "label", "policy")
    if kernel is not None:
        G, _ = kernel.evaluate(0.0, run.y_final)
        tail_paths = math.exp(-util.gamma * S) * G ** (1.0 - util.alpha) * run.z_final ** util.alpha / util.alpha
        tail = float(tail_paths.mean())
        _, tot_se = _mean_se(run.reward + tail_paths)
        return RewardEstimate(mean, se, config.n_paths, label, S, abs(tail), tail, "analytic", tot_se,
                              run.candidate)
    flow = run.integrand_mean
    times = run.times
    half = times >= S / 2
    f = flow[half]
    if np.all(f > 0) or np.all(f < 0):
        slope, icpt = np.polyfit(times[half], np.log(np.abs(f)), 1)
        tail = math.copysign(math.exp(icpt + slope * S) / -slope, f[-1]) if slope < 0 else math.copysign(math.inf, f[-1])
    else:
        tail = 0.0
    return RewardEstimate(mean, se, config.n_paths, label, S, abs(tail), tail, "empirical", se, run.candidate)


def write_path_dump(run: SimRun, path, max_paths: int | None = None):
    """CSV with columns t, path_id, y_*, z, C, weights_*."""
    if run.y is None or run.z is None:
        raise ValueError("run has no stored paths")
    npath = run.y.shape[0] if max_paths is None else min(max_paths, run.y.shape[0])
    n = run.y.shape[2]
    nw = 0 if run.weights is None else run.weights.shape[2]
    header = ["t", "path_id"] + [f"y_{i + 1}" for i in range(n)] + ["z", "C"] + [f"weights_{i + 1}" for i in range(nw)]
    fmt = lambda v: format(float(v), ".17g")  # noqa: E731
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for p in range(npath):
            for k, t in enumerate(run.times):
                row = [fmt(t), str(p)] + [fmt(v) for v in run.y[p, k]] + [fmt(run.z[p, k]), fmt(run.consumption[p, k])]
                if nw:
                    row += [fmt(v) for v in run.weights[p, k]]
                w.writerow(row)
