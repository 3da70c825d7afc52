"""Chebyshev graph convolution, dense and readout layers with manual gradients.

Graph activations use the node-major layout (n, batch, channels) so that a
whole batch goes through one sparse product with the scaled Laplacian.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..spectral import ScaledLaplacian


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def sigmoid(z):
    """Logistic function without overflow for large |z|."""
    z = np.asarray(z)
    out = np.empty_like(z, dtype=np.result_type(z, np.float32))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class ChebConvLayer:
    theta: np.ndarray  # (K, c_in, c_out)
    bias: np.ndarray  # (c_out,)

    @property
    def order(self) -> int:
        return self.theta.shape[0]

    @property
    def c_in(self) -> int:
        return self.theta.shape[1]

    @property
    def c_out(self) -> int:
        return self.theta.shape[2]


@dataclass
class DenseHead:
    weights: np.ndarray  # (n, c_L)
    bias: np.ndarray  # shape (1,)


@dataclass
class DenseLayer:
    weights: np.ndarray  # (d_in, d_out)
    bias: np.ndarray  # (d_out,)


def _contract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b accumulated in double, rounded once to the input dtype.

    Keeps forward results independent of batch size, which single-precision
    BLAS kernels do not guarantee.
    """
    out = np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64)
    return out.astype(np.result_type(a, b), copy=False)


def _as3d(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x[:, None, :], True
    if x.ndim != 3:
        raise ValueError(f"expected (n, c) or (n, batch, c) activations, got shape {x.shape}")
    return x, False


def chebyshev_basis(ltilde: ScaledLaplacian, x: np.ndarray, order: int) -> np.ndarray:
    """Stack [x, L~x, T_2(L~)x, ...] along a new axis 2: (n, batch, K, c)."""
    xs = [x]
    if order > 1:
        xs.append(ltilde.apply(x))
    for _ in range(2, order):
        xs.append(2 * ltilde.apply(xs[-1]) - xs[-2])
    return np.stack(xs, axis=2)


def cheb_conv_forward(layer: ChebConvLayer, ltilde: ScaledLaplacian, x: np.ndarray):
    """ReLU(sum_k T_k(L~) X theta[k] + bias); returns (output, cache).

    The recurrence runs once per input channel and is shared by all output
    channels, i.e. c_in * (K - 1) Laplacian products per sample.
    """
    x3, squeeze = _as3d(x)
    n, b, c_in = x3.shape
    if n != ltilde.n or c_in != layer.c_in:
        raise ValueError(f"input {x3.shape[::2]} does not match layer (n={ltilde.n}, c_in={layer.c_in})")
    k = layer.order
    basis = chebyshev_basis(ltilde, x3, k)
    pre = _contract(basis.reshape(n * b, k * c_in), layer.theta.reshape(k * c_in, layer.c_out)) + layer.bias
    out = relu(pre).reshape(n, b, layer.c_out)
    cache = (basis, pre)
    return (out[:, 0, :] if squeeze else out), cache


def cheb_conv_backward(layer: ChebConvLayer, ltilde: ScaledLaplacian, cache, dout: np.ndarray,
                       need_input_grad: bool = True):
    """Gradients (d_input, d_theta, d_bias) given d_loss/d_output.

    L~ is symmetric, so the adjoint of the recurrence reuses plain L~ products.
    """
    basis, pre = cache
    n, b, k, c_in = basis.shape
    d2 = np.asarray(dout).reshape(n * b, layer.c_out) * (pre > 0)
    d_theta = (basis.reshape(n * b, k * c_in).T @ d2).reshape(layer.theta.shape)
    d_bias = d2.sum(axis=0)
    if not need_input_grad:
        return None, d_theta, d_bias
    g = (d2 @ layer.theta.reshape(k * c_in, layer.c_out).T).reshape(n, b, k, c_in)
    g = [g[:, :, i, :].copy() for i in range(k)]
    for i in range(k - 1, 1, -1):
        g[i - 1] += 2 * ltilde.apply(g[i])
        g[i - 2] -= g[i]
    if k > 1:
        g[0] += ltilde.apply(g[1])
    dx = g[0]
    return (dx[:, 0, :] if np.ndim(dout) == 2 else dx), d_theta, d_bias


def dense_head_forward(head: DenseHead, x: np.ndarray):
    """Scalar logit per sample: Frobenius product <W, X> plus bias.

    Returns (logits, cache); apply :func:`sigmoid` for the probability.
    """
    x3, squeeze = _as3d(x)
    if x3.shape[0] != head.weights.shape[0] or x3.shape[2] != head.weights.shape[1]:
        raise ValueError(f"head expects (n, c) = {head.weights.shape}, got {x3.shape[::2]}")
    dt = np.result_type(x3, head.weights)
    logits = (np.einsum("nbc,nc->b", x3.astype(np.float64), head.weights.astype(np.float64))
              .astype(dt) + head.bias[0])
    return (logits[0] if squeeze else logits), x3


def dense_head_backward(head: DenseHead, cache, dlogits):
    x3 = cache
    dlogits = np.atleast_1d(dlogits)
    d_w = np.einsum("nbc,b->nc", x3, dlogits)
    d_b = np.array([dlogits.sum()], dtype=head.bias.dtype)
    dx = head.weights[:, None, :] * dlogits[None, :, None]
    return dx, d_w, d_b


def dense_forward(layer: DenseLayer, x: np.ndarray, activation: bool = True):
    pre = _contract(x, layer.weights) + layer.bias
    return (relu(pre) if activation else pre), (x, pre, activation)


def dense_backward(layer: DenseLayer, cache, dout: np.ndarray, need_input_grad: bool = True):
    x, pre, activation = cache
    d = dout * (pre > 0) if activation else dout
    d_w = x.T @ d
    d_b = d.sum(axis=0)
    dx = d @ layer.weights.T if need_input_grad else None
    return dx, d_w, d_b
