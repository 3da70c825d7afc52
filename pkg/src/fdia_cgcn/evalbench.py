"""Detection metrics and per-sample inference latency."""
from __future__ import annotations

import os
import platform
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .dataset import Scaler, Split
from .nn.model import predict_batch


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def dr(self) -> float | None:
        """Detection rate TP / (TP + FN); None when there are no attacked samples."""
        pos = self.tp + self.fn
        return self.tp / pos if pos else None

    @property
    def fa(self) -> float | None:
        """False-alarm rate FP / (FP + TN); None when there are no clean samples."""
        neg = self.fp + self.tn
        return self.fp / neg if neg else None

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "tp": self.tp, "fp": self.fp, "tn": self.tn,
                "fn": self.fn, "dr": self.dr, "fa": self.fa}


@dataclass(frozen=True)
class LatencyReport:
    mean_ms: float
    median_ms: float
    p95_ms: float
    min_ms: float
    max_ms: float
    n: int
    warmup: int
    host: str

    def to_dict(self) -> dict:
        return {"mean_ms": self.mean_ms, "median_ms": self.median_ms, "p95_ms": self.p95_ms,
                "min_ms": self.min_ms, "max_ms": self.max_ms, "n": self.n,
                "warmup": self.warmup, "host": self.host}


def confusion(probabilities, labels, threshold: float = 0.5) -> Metrics:
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if p.size == 0:
        raise ValueError("cannot evaluate an empty split")
    pred = p >= threshold
    return Metrics(int(np.sum(pred & y)), int(np.sum(pred & ~y)),
                   int(np.sum(~pred & ~y)), int(np.sum(~pred & y)), float(threshold))


def evaluate(model, scaler: Scaler, split: Split, threshold: float = 0.5) -> Metrics:
    """Confusion counts with a positive call when probability >= threshold."""
    if len(split) == 0:
        raise ValueError("cannot evaluate an empty split")
    return confusion(predict_batch(model, scaler, split.features), split.labels, threshold)


def host_description() -> str:
    return f"{platform.machine()} {platform.processor() or platform.system()} cpus={os.cpu_count()} " \
           f"python={platform.python_version()} numpy={np.__version__}"


def benchmark_inference(model, scaler: Scaler, features: np.ndarray, repeats: int = 1,
                        warmup: int = 0) -> LatencyReport:
    """Time one detection (standardize, forward pass, sigmoid) per sample.

    Each of the ``repeats`` passes over ``features`` times every sample with a
    monotonic clock; the first ``warmup`` timings are discarded.
    """
    feats = np.asarray(features)
    if feats.ndim == 2:
        feats = feats[None]
    if len(feats) < 1:
        raise ValueError("need at least one sample")
    times = []
    for _ in range(max(1, repeats)):
        for f in feats:
            x = f[None]
            t0 = time.perf_counter()
            model.predict_proba(scaler.transform(x))
            times.append((time.perf_counter() - t0) * 1e3)
    if warmup >= len(times):
        raise ValueError(f"warmup={warmup} discards all {len(times)} timings")
    kept = times[warmup:]
    return LatencyReport(
        mean_ms=statistics.fmean(kept),
        median_ms=statistics.median(kept),
        p95_ms=float(np.percentile(kept, 95)),
        min_ms=min(kept),
        max_ms=max(kept),
        n=len(kept),
        warmup=warmup,
        host=host_description(),
    )


def report(metrics: Metrics | None = None, latency: LatencyReport | None = None) -> dict:
    out = metrics.to_dict() if metrics else {}
    if latency is not None:
        out["latency"] = latency.to_dict()
    return out
