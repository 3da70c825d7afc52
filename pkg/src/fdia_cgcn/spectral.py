"""Normalized Laplacian, spectral rescaling and K-localized Chebyshev filtering."""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .grid import WeightedGraph

DENSE_ORACLE_CAP = 256


@dataclass(frozen=True)
class NormalizedLaplacian:
    n: int
    matrix: sp.csr_matrix


@dataclass(eq=False)
class ScaledLaplacian:
    """2 L / lambda_max - I, with a counter of L~-vector products.

    ``matvecs`` counts columns pushed through :meth:`apply`: an (n, m) block
    counts as m products.
    """

    n: int
    matrix: sp.csr_matrix
    lambda_max: float
    matvecs: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def apply(self, x: np.ndarray) -> np.ndarray:
        cols = 1 if x.ndim == 1 else int(np.prod(x.shape[1:]))
        with self._lock:
            self.matvecs += cols
        if x.ndim <= 2:
            return self.matrix @ x
        return (self.matrix @ x.reshape(self.n, -1)).reshape(x.shape)

    def reset_counter(self) -> None:
        with self._lock:
            self.matvecs = 0

    def astype(self, dtype) -> "ScaledLaplacian":
        return ScaledLaplacian(self.n, self.matrix.astype(dtype), self.lambda_max)


class LambdaMax(NamedTuple):
    value: float
    iterations: int
    fallback: bool


def normalized_laplacian(w: WeightedGraph) -> NormalizedLaplacian:
    """I - D^-1/2 W D^-1/2 with the sparsity of W plus the diagonal."""
    if np.any(w.degree <= 0):
        bad = np.flatnonzero(w.degree <= 0)
        raise ValueError(f"vertices with zero degree: {bad[:10].tolist()}")
    dinv = sp.diags(1.0 / np.sqrt(w.degree))
    lap = sp.identity(w.n, format="csr") - dinv @ w.weights @ dinv
    lap = sp.csr_matrix(lap)
    lap.sort_indices()
    return NormalizedLaplacian(w.n, lap)


def estimate_lambda_max(lap: NormalizedLaplacian, tol: float = 1e-6, max_iter: int = 20000,
                        seed: int = 0) -> LambdaMax:
    """Largest eigenvalue of L by power iteration.

    Iterates until the residual ||L v - mu v|| drops under ``tol * mu``.
    Without convergence the analytic bound 2 is returned with ``fallback`` set.
    """
    n = lap.n
    if n == 1:
        return LambdaMax(float(lap.matrix[0, 0]), 0, False)
    rng = np.random.default_rng(seed)
    v = rng.uniform(0.5, 1.5, n) * rng.choice([-1.0, 1.0], n)
    v /= np.linalg.norm(v)
    mu = 0.0
    for it in range(1, max_iter + 1):
        lv = lap.matrix @ v
        mu = float(v @ lv)
        if mu > 0 and np.linalg.norm(lv - mu * v) <= tol * mu:
            return LambdaMax(min(mu, 2.0), it, False)
        nrm = np.linalg.norm(lv)
        if nrm == 0:
            break
        v = lv / nrm
    return LambdaMax(2.0, max_iter, True)


def scale_laplacian(lap: NormalizedLaplacian, lambda_max: float) -> ScaledLaplacian:
    lam = float(lambda_max)
    if not lam > 0:
        raise ValueError(f"lambda_max must be positive, got {lam}")
    scaled = (2.0 / lam) * lap.matrix - sp.identity(lap.n, format="csr")
    scaled = sp.csr_matrix(scaled)
    scaled.sort_indices()
    return ScaledLaplacian(lap.n, scaled, lam)


def scaled_laplacian_from_graph(w: WeightedGraph, lambda_max: float | None = None) -> ScaledLaplacian:
    """Normalized Laplacian of ``w`` rescaled by ``lambda_max`` (power-iteration estimate if omitted)."""
    lap = normalized_laplacian(w)
    if lambda_max is None:
        lambda_max = estimate_lambda_max(lap).value
    return scale_laplacian(lap, lambda_max)


def cheb_eval_scalar(k: int, x: float) -> float:
    """T_k(x) by the three-term recurrence."""
    if k < 0:
        raise ValueError("order must be nonnegative")
    t_prev, t = 1.0, x
    if k == 0:
        return t_prev
    for _ in range(k - 1):
        t_prev, t = t, 2 * x * t - t_prev
    return t


def cheb_filter_apply(ltilde: ScaledLaplacian, theta: Sequence[float], x: np.ndarray) -> np.ndarray:
    """sum_k theta_k T_k(L~) x via the vector recurrence.

    Uses exactly K-1 products with L~ per signal column; ``x`` may be (n,) or
    (n, m) for m signals filtered together.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size < 1:
        raise ValueError("need at least one Chebyshev coefficient")
    x = np.asarray(x, dtype=float)
    if x.shape[0] != ltilde.n:
        raise ValueError(f"signal has {x.shape[0]} rows, graph has {ltilde.n} vertices")
    x_prev = x
    y = theta[0] * x_prev
    if theta.size == 1:
        return y
    x_cur = ltilde.apply(x)
    y = y + theta[1] * x_cur
    for k in range(2, theta.size):
        x_prev, x_cur = x_cur, 2 * ltilde.apply(x_cur) - x_prev
        y = y + theta[k] * x_cur
    return y


def spectral_filter_reference(lap: NormalizedLaplacian, theta: Sequence[float], x: np.ndarray,
                              lambda_max: float | None = None) -> np.ndarray:
    """Dense U g(Lambda) U^T x with g(l) = sum_k theta_k T_k(2 l / lambda_max - 1).

    Test oracle only; refuses graphs larger than 256 vertices.  When
    ``lambda_max`` is omitted the exact largest eigenvalue is used.
    """
    if lap.n > DENSE_ORACLE_CAP:
        raise ValueError(f"dense reference limited to n <= {DENSE_ORACLE_CAP}, got {lap.n}")
    lam, u = np.linalg.eigh(lap.matrix.toarray())
    lmax = lam[-1] if lambda_max is None else float(lambda_max)
    s = 2.0 * lam / lmax - 1.0
    # T_k(s) = cos(k arccos s) only holds on [-1, 1]; use the recurrence instead
    g = np.zeros_like(s)
    for k, c in enumerate(np.asarray(theta, dtype=float)):
        g += c * np.array([cheb_eval_scalar(k, si) for si in s])
    x = np.asarray(x, dtype=float)
    xt = u.T @ x
    gx = g[:, None] * xt if xt.ndim == 2 else g * xt
    return u @ gx
