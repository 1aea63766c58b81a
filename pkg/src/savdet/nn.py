"""Minimal numpy neural-net layers with hand-written backward passes.

Everything operates on float64 so central finite differences can verify the
analytic gradients tightly. Parameters live in flat dicts name -> array.
"""

from __future__ import annotations

import numpy as np


# ---------------------------------------------------------------------------
# dense

def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """x (N, in), w (out, in), b (out,) -> (N, out)."""
    return x @ w.T + b


def linear_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    dw = dy.T @ x
    db = dy.sum(axis=0)
    dx = dy @ w
    return dx, dw, db


# ---------------------------------------------------------------------------
# activations

def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray):
    return dy * (x > 0.0)


def sigmoid(x: np.ndarray):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# layer normalization (per row)

LN_EPS = 1e-5


def layernorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    out = xhat * gamma + beta
    cache = (xhat, inv)
    return out, cache


def layernorm_backward(cache, gamma: np.ndarray, dy: np.ndarray):
    xhat, inv = cache
    n = xhat.shape[1]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = inv / n * (n * dxhat
                    - dxhat.sum(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=1, keepdims=True))
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# 2-D convolution (NCHW, square kernel)

def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    cols = np.empty((n, c, k, k, oh, ow), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j, :, :] = xp[:, :, i:i + stride * oh:stride,
                                        j:j + stride * ow:stride]
    return cols.reshape(n, c * k * k, oh * ow), (oh, ow)


def _col2im(dcols: np.ndarray, x_shape, k: int, stride: int, pad: int):
    n, c, h, w = x_shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    dcols = dcols.reshape(n, c, k, k, oh, ow)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                dcols[:, :, i, j, :, :]
    if pad:
        return dxp[:, :, pad:-pad, pad:-pad]
    return dxp


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   stride: int = 2, pad: int = 1):
    """x (N,C,H,W), w (OC,C,k,k), b (OC,) -> out (N,OC,OH,OW) plus cache."""
    oc = w.shape[0]
    k = w.shape[2]
    cols, (oh, ow) = _im2col(x, k, stride, pad)
    wm = w.reshape(oc, -1)
    out = np.einsum("oc,ncl->nol", wm, cols) + b[None, :, None]
    out = out.reshape(x.shape[0], oc, oh, ow)
    return out, (cols, x.shape)


def conv2d_backward(cache, w: np.ndarray, dy: np.ndarray,
                    stride: int = 2, pad: int = 1):
    cols, x_shape = cache
    n, oc = dy.shape[0], dy.shape[1]
    k = w.shape[2]
    dyf = dy.reshape(n, oc, -1)
    dw = np.einsum("nol,ncl->oc", dyf, cols).reshape(w.shape)
    db = dyf.sum(axis=(0, 2))
    dcols = np.einsum("oc,nol->ncl", w.reshape(oc, -1), dyf)
    dx = _col2im(dcols, x_shape, k, stride, pad)
    return dx, dw, db


# ---------------------------------------------------------------------------
# optimizer

class SGD:
    """Plain stochastic gradient descent with optional momentum."""

    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        for name in sorted(params):
            g = grads[name]
            if self.momentum:
                v = self.velocity.get(name)
                v = g if v is None else self.momentum * v + g
                self.velocity[name] = v
                g = v
            params[name] = params[name] - self.lr * g


def he_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


# ---------------------------------------------------------------------------
# finite-difference gradient verification

def fd_gradcheck(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                 loss_fn, step: float = 1e-4, pattern_fn=None) -> float:
    """Max relative error between `grads` and central finite differences.

    `loss_fn()` evaluates the loss with the (mutated in place) params.
    `pattern_fn()`, when given, returns the current activation-sign pattern;
    coordinates whose +/- probes land on different sides of a rectifier kink
    are re-probed with a smaller step, since the loss is not differentiable
    there and plain central differences would report a spurious mismatch.
    """
    max_rel = 0.0
    for name in sorted(params):
        flat = params[name].reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            h = step
            for _ in range(4):
                flat[i] = orig + h
                loss_p = loss_fn()
                pat_p = pattern_fn() if pattern_fn else None
                flat[i] = orig - h
                loss_m = loss_fn()
                pat_m = pattern_fn() if pattern_fn else None
                flat[i] = orig
                if pattern_fn is None or pat_p == pat_m:
                    break
                h /= 10.0
            numeric = (loss_p - loss_m) / (2.0 * h)
            denom = max(abs(numeric) + abs(gflat[i]), 1e-6)
            max_rel = max(max_rel, abs(numeric - gflat[i]) / denom)
    return max_rel
