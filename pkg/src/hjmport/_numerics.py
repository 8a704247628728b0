"""Small numerical kernels shared by the model, kernel and simulation code."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import linalg

_SERIES_CUTOFF = 0.5


def phi(k: int, z):
    """Exponential-integrator function phi_k(z) = sum_j z^j / (j + k)!.

    phi_0 = exp, phi_1(z) = (e^z - 1)/z, ...  Evaluated by Taylor series near
    zero and by the downward recurrence elsewhere, so that expressions such
    as (1 - e^{-kx})/k stay accurate as k -> 0.
    """
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < _SERIES_CUTOFF

    zs = z[small]
    term = np.full_like(zs, 1.0 / math.factorial(k))
    total = term.copy()
    for j in range(1, 30):
        term = term * zs / (j + k)
        total += term
    out[small] = total

    zl = z[~small]
    p = np.exp(zl)
    for j in range(1, k + 1):
        p = (p - 1.0 / math.factorial(j - 1)) / zl
    out[~small] = p
    return out if out.ndim else float(out)


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def composite_rule(panels: int, order: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on [0, 1] with equal panels."""
    x, w = gauss_legendre(order)
    edges = np.arange(panels) / panels
    nodes = (edges[:, None] + x[None, :] / panels).ravel()
    weights = np.tile(w / panels, panels)
    return nodes, weights


def integrate_cumulative(f, points: np.ndarray, max_width: float, order: int = 12) -> np.ndarray:
    """Integral of ``f`` from 0 to each entry of ``points``.

    ``points`` must be nonnegative and sorted ascending. ``f`` maps an array of
    abscissae of shape (k,) to values of shape (k, ...). Consecutive gaps are
    split into panels no wider than ``max_width``, each integrated with a fixed
    Gauss-Legendre rule, so the result is a smooth function of ``points``.
    """
    points = np.asarray(points, dtype=float)
    left = np.concatenate([[0.0], points[:-1]])
    gaps = points - left
    npan = np.maximum(1, np.ceil(gaps / max_width).astype(int))
    x, w = gauss_legendre(order)

    # flatten every (gap, panel, node) triple into one evaluation
    gap_idx = np.repeat(np.arange(points.size), npan)
    pan_idx = np.concatenate([np.arange(k) for k in npan])
    width = gaps[gap_idx] / npan[gap_idx]
    start = left[gap_idx] + pan_idx * width
    abscissae = (start[:, None] + width[:, None] * x[None, :]).ravel()
    vals = np.asarray(f(abscissae))
    vals = vals.reshape((gap_idx.size, order) + vals.shape[1:])
    wshape = (gap_idx.size, order) + (1,) * (vals.ndim - 2)
    panel_int = (vals * (width[:, None] * w[None, :]).reshape(wshape)).sum(axis=1)
    per_gap = np.zeros((points.size,) + panel_int.shape[1:])
    np.add.at(per_gap, gap_idx, panel_int)
    return np.cumsum(per_gap, axis=0)


def integrated_exponential(b2: np.ndarray, vec: np.ndarray, tau) -> np.ndarray:
    """h(tau) = int_0^tau exp(b2 s) ds @ vec for each tau, shape (len(tau), n).

    Diagonal ``b2`` uses the stable phi_1 form; anything else goes through the
    augmented-matrix exponential.
    """
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    b2 = np.asarray(b2, dtype=float)
    vec = np.asarray(vec, dtype=float)
    if np.allclose(b2, np.diag(np.diag(b2)), rtol=0.0, atol=0.0):
        d = np.diag(b2)
        return tau[:, None] * phi(1, tau[:, None] * d[None, :]) * vec[None, :]
    n = b2.shape[0]
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = b2
    aug[:n, n] = vec
    return np.array([linalg.expm(s * aug)[:n, n] for s in tau])


def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """Symmetric square root of a positive semidefinite matrix (negative
    round-off eigenvalues clipped to zero)."""
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T
