"""Detector models: the Chebyshev GCN and a fully connected baseline."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dataset import Sample, Scaler
from ..spectral import ScaledLaplacian
from .layers import (ChebConvLayer, DenseHead, DenseLayer, cheb_conv_backward, cheb_conv_forward,
                     dense_backward, dense_forward, dense_head_backward, dense_head_forward, sigmoid)

DTYPES = {"float32": np.float32, "float64": np.float64}


class ArchitectureError(ValueError):
    pass


@dataclass(frozen=True)
class CgcnArch:
    n: int
    channels: tuple[int, ...] = (2, 32, 32, 32, 32)
    order: int = 5

    @property
    def layers(self) -> int:
        return len(self.channels) - 1

    @classmethod
    def default(cls, n: int, layers: int = 4, width: int = 32, order: int = 5) -> "CgcnArch":
        return cls(n, (2,) + (width,) * layers, order)

    def to_dict(self) -> dict:
        return {"kind": "cgcn", "n": self.n, "layers": self.layers,
                "channels": list(self.channels), "order": self.order}


@dataclass(frozen=True)
class FcnArch:
    n: int
    units: tuple[int, ...] = (64, 64, 64, 64)

    @property
    def layers(self) -> int:
        return len(self.units)

    @classmethod
    def default(cls, n: int, layers: int = 4, units: int = 64) -> "FcnArch":
        return cls(n, (units,) * layers)

    def to_dict(self) -> dict:
        return {"kind": "fcn", "n": self.n, "layers": self.layers, "units": list(self.units)}


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass(eq=False)
class CgcnModel:
    """Stack of Chebyshev graph convolutions followed by a sigmoid readout.

    Inputs are batches of standardized features shaped (batch, n, 2).
    """

    arch: CgcnArch
    ltilde: ScaledLaplacian
    layers: list[ChebConvLayer]
    head: DenseHead
    dtype: type = np.float32
    kind: str = field(default="cgcn", init=False)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.theta, layer.bias]
        return out + [self.head.weights, self.head.bias]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 3 or x.shape[1:] != (self.arch.n, 2):
            raise ArchitectureError(f"expected inputs (batch, {self.arch.n}, 2), got {x.shape}")
        h = np.ascontiguousarray(x.transpose(1, 0, 2))
        caches = []
        for layer in self.layers:
            h, c = cheb_conv_forward(layer, self.ltilde, h)
            caches.append(c)
        logits, head_cache = dense_head_forward(self.head, h)
        return logits, (caches, head_cache)

    def backward(self, cache, dlogits: np.ndarray) -> list[np.ndarray]:
        if cache is None:
            raise RuntimeError("backward called without a forward cache")
        caches, head_cache = cache
        dh, d_w, d_b = dense_head_backward(self.head, head_cache, np.asarray(dlogits, dtype=self.dtype))
        grads = [d_w, d_b]
        for i in range(len(self.layers) - 1, -1, -1):
            dh, d_theta, d_bias = cheb_conv_backward(self.layers[i], self.ltilde, caches[i], dh,
                                                     need_input_grad=i > 0)
            grads = [d_theta, d_bias] + grads
        return grads

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        logits, _ = self.forward(x)
        return sigmoid(logits)


@dataclass(eq=False)
class FcnModel:
    """Dense ReLU stack on the flattened 2n feature vector with a sigmoid readout."""

    arch: FcnArch
    layers: list[DenseLayer]
    head: DenseLayer
    dtype: type = np.float32
    kind: str = field(default="fcn", init=False)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers + [self.head]:
            out += [layer.weights, layer.bias]
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 3 or x.shape[1:] != (self.arch.n, 2):
            raise ArchitectureError(f"expected inputs (batch, {self.arch.n}, 2), got {x.shape}")
        h = x.reshape(x.shape[0], -1)
        caches = []
        for layer in self.layers:
            h, c = dense_forward(layer, h)
            caches.append(c)
        out, hc = dense_forward(self.head, h, activation=False)
        return out[:, 0], (caches, hc)

    def backward(self, cache, dlogits: np.ndarray) -> list[np.ndarray]:
        if cache is None:
            raise RuntimeError("backward called without a forward cache")
        caches, hc = cache
        d = np.asarray(dlogits, dtype=self.dtype)[:, None]
        d, d_w, d_b = dense_backward(self.head, hc, d)
        grads = [d_w, d_b]
        for i in range(len(self.layers) - 1, -1, -1):
            d, d_w, d_b = dense_backward(self.layers[i], caches[i], d, need_input_grad=i > 0)
            grads = [d_w, d_b] + grads
        return grads

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        logits, _ = self.forward(x)
        return sigmoid(logits)


def init_model(arch: CgcnArch, ltilde: ScaledLaplacian, seed: int = 0, precision: str = "float32",
               zero: bool = False) -> CgcnModel:
    """Glorot-uniform Chebyshev coefficients and readout, zero biases.

    ``zero`` builds an all-zero model whose output is 0.5 everywhere (testing aid).
    """
    if len(arch.channels) < 2 or arch.channels[0] != 2:
        raise ArchitectureError(f"channel chain must start at 2 input channels, got {arch.channels}")
    if arch.order < 1 or min(arch.channels) < 1:
        raise ArchitectureError("order and channel counts must be positive")
    if ltilde.n != arch.n:
        raise ArchitectureError(f"Laplacian has {ltilde.n} vertices, architecture expects {arch.n}")
    dtype = DTYPES[precision]
    rng = np.random.default_rng(seed)
    k = arch.order
    layers = []
    for c_in, c_out in zip(arch.channels[:-1], arch.channels[1:]):
        theta = np.zeros((k, c_in, c_out)) if zero else _glorot(rng, (k, c_in, c_out), k * c_in, k * c_out)
        layers.append(ChebConvLayer(theta.astype(dtype), np.zeros(c_out, dtype=dtype)))
    c_last = arch.channels[-1]
    w = np.zeros((arch.n, c_last)) if zero else _glorot(rng, (arch.n, c_last), arch.n * c_last, 1)
    head = DenseHead(w.astype(dtype), np.zeros(1, dtype=dtype))
    return CgcnModel(arch, ltilde.astype(dtype), layers, head, dtype)


def build_fcn_baseline(arch: FcnArch, seed: int = 0, precision: str = "float32",
                       zero: bool = False) -> FcnModel:
    if arch.layers < 1 or min(arch.units) < 1:
        raise ArchitectureError("FCN needs at least one positive-width hidden layer")
    dtype = DTYPES[precision]
    rng = np.random.default_rng(seed)
    dims = (2 * arch.n,) + tuple(arch.units)
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        w = np.zeros((d_in, d_out)) if zero else _glorot(rng, (d_in, d_out), d_in, d_out)
        layers.append(DenseLayer(w.astype(dtype), np.zeros(d_out, dtype=dtype)))
    w = np.zeros((dims[-1], 1)) if zero else _glorot(rng, (dims[-1], 1), dims[-1], 1)
    head = DenseLayer(w.astype(dtype), np.zeros(1, dtype=dtype))
    return FcnModel(arch, layers, head, dtype)


def predict_batch(model, scaler: Scaler, features: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    """Attack probabilities for raw (unstandardized) features shaped (count, n, 2)."""
    features = np.asarray(features)
    if features.ndim == 2:
        features = features[None]
    if features.shape[1] != model.arch.n:
        raise ArchitectureError(f"model expects n={model.arch.n}, samples have n={features.shape[1]}")
    out = np.empty(len(features), dtype=np.float64)
    for i in range(0, len(features), batch_size):
        x = scaler.transform(features[i:i + batch_size])
        out[i:i + batch_size] = model.predict_proba(x)
    return out


def predict(model, scaler: Scaler, sample: Sample | np.ndarray) -> float:
    feats = sample.features if isinstance(sample, Sample) else sample
    return float(predict_batch(model, scaler, np.asarray(feats)[None])[0])
