"""Mini-batch training with validation-based early stopping."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .loss import bce_with_logits
from .optim import AdamHyper, AdamState, adam_step


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    max_epochs: int = 256
    patience: int | None = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience is not None and self.patience < 0:
            raise ValueError("patience must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""
    initial_train_loss: float = float("nan")
    final_train_loss: float = float("nan")

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch - 1]

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "best_epoch": self.best_epoch,
            "stop_reason": self.stop_reason,
            "initial_train_loss": self.initial_train_loss,
            "final_train_loss": self.final_train_loss,
        }


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, history: TrainHistory):
        self.history = history
        super().__init__(message)


def dataset_loss(model, x: np.ndarray, y: np.ndarray, batch_size: int = 2048) -> float:
    """Mean BCE of ``model`` over standardized inputs ``x``."""
    total = 0.0
    for i in range(0, len(x), batch_size):
        logits, _ = model.forward(x[i:i + batch_size])
        loss, _ = bce_with_logits(logits, y[i:i + batch_size])
        total += loss * len(logits)
    return total / len(x)


def train(model, dataset, config: TrainConfig | None = None, log=None):
    """Fit ``model`` on ``dataset.train``; early-stop on ``dataset.validation``.

    After every epoch the validation BCE is computed; if it fails to strictly
    improve for ``patience`` consecutive epochs training stops.  The parameters
    from the best validation epoch are always restored.  Returns
    ``(model, history)``.
    """
    cfg = config or TrainConfig()
    scaler = dataset.scaler
    if len(dataset.train) == 0 or len(dataset.validation) == 0:
        raise ValueError("train and validation splits must be nonempty")
    x_tr = scaler.transform(dataset.train.features).astype(model.dtype)
    y_tr = dataset.train.labels.astype(np.float64)
    x_va = scaler.transform(dataset.validation.features).astype(model.dtype)
    y_va = dataset.validation.labels.astype(np.float64)

    params = model.parameters()
    state = AdamState.zeros_like(params)
    hyper = AdamHyper(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    hist = TrainHistory(initial_train_loss=dataset_loss(model, x_tr, y_tr))

    best = float("inf")
    best_params = [p.copy() for p in params]
    wait = 0
    hist.stop_reason = "max_epochs"
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(x_tr))
        running = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits, cache = model.forward(x_tr[idx])
            loss, dlogits = bce_with_logits(logits, y_tr[idx])
            grads = model.backward(cache, dlogits)
            adam_step(params, grads, state, hyper)
            running += loss * len(idx)
        hist.train_loss.append(running / len(order))
        val = dataset_loss(model, x_va, y_va)
        hist.val_loss.append(val)
        if log:
            log(epoch, hist.train_loss[-1], val)
        if not (np.isfinite(val) and np.isfinite(hist.train_loss[-1])):
            hist.stop_reason = "diverged"
            raise TrainingDiverged(f"loss became non-finite at epoch {epoch}", hist)
        if val < best:
            best = val
            hist.best_epoch = epoch
            best_params = [p.copy() for p in params]
            wait = 0
        else:
            wait += 1
            if cfg.patience is not None and wait >= cfg.patience:
                hist.stop_reason = "early"
                break

    for p, b in zip(params, best_params):
        p[...] = b
    hist.final_train_loss = dataset_loss(model, x_tr, y_tr)
    return model, hist
