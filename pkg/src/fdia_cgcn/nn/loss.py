"""Binary cross-entropy."""
from __future__ import annotations

import numpy as np

PROB_CLIP = 1e-12


def _check(a: np.ndarray, y: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if a.size == 0:
        raise ValueError("empty batch")
    if a.shape != y.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {y.shape}")
    return a, y


def bce_loss(predictions, labels) -> tuple[float, np.ndarray]:
    """Mean BCE of probabilities and its gradient w.r.t. the probabilities.

    Probabilities are clipped to [1e-12, 1 - 1e-12] before taking logs.
    """
    p, y = _check(predictions, labels)
    p = np.clip(p, PROB_CLIP, 1 - PROB_CLIP)
    n = p.size
    loss = -np.mean(y * np.log(p) + (1 - y) * np.log1p(-p))
    grad = (-(y / p) + (1 - y) / (1 - p)) / n
    return float(loss), grad


def bce_with_logits(logits, labels) -> tuple[float, np.ndarray]:
    """Mean BCE evaluated from pre-sigmoid logits, and its gradient w.r.t. the logits."""
    z, y = _check(logits, labels)
    loss = np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z))))
    prob = np.where(z >= 0, 1 / (1 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1 + np.exp(-np.abs(z))))
    return float(loss), (prob - y) / z.size
