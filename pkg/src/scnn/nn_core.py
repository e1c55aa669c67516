"""Numerical primitives: init, layer forward/backward, dropout, loss, Adam.

All functions are pure in their inputs plus an explicit Rng; randomness never
comes from hidden global state. Parameters and activations are float32 by
default; passing float64 arrays flows float64 end to end (used by the
gradient checker). Reductions keep a fixed order so repeated runs are
bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NumericError
from .rng import Rng


def xavier_init(fan_in: int, fan_out: int, shape, rng: Rng, dtype=np.float32) -> np.ndarray:
    """Uniform init on [-b, b] with b = sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fan_in and fan_out must be >= 1, got {fan_in}, {fan_out}")
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, shape).astype(dtype)


# --------------------------------------------------------------------------
# convolution group (shared-width filter bank) + max-over-time pooling
# --------------------------------------------------------------------------

def conv_group_forward(doc: np.ndarray, W: np.ndarray, b: np.ndarray):
    """ReLU conv over the document rows, then per-filter max over positions.

    ``doc`` is (L, dim) for one document or (B, L, dim) for a batch; W is
    (h, dim, f), b is (f,). Returns (pooled, cache); pooled is (f,) or (B, f)
    matching the input rank. Ties in the max take the lowest position.
    """
    single = doc.ndim == 2
    docs = doc[None] if single else doc
    h, wdim, f = W.shape
    if docs.ndim != 3 or docs.shape[2] != wdim:
        raise ValueError(f"doc shape {doc.shape} does not match filter dim {wdim}")
    if b.shape != (f,):
        raise ValueError(f"bias shape {b.shape} does not match filter count {f}")
    if h > docs.shape[1]:
        raise ValueError(f"filter width {h} exceeds document length {docs.shape[1]}")
    pooled, argmax = kernels.conv_pool_forward(docs, W, b)
    cache = (docs, argmax, pooled, h)
    return (pooled[0] if single else pooled), cache


def conv_group_backward(cache, d_pooled: np.ndarray):
    """Gradients (dW, db) for a conv group from the pooled-output gradient.

    Max-over-time routes gradient only to each filter's argmax position;
    the ReLU gate zeroes it where the selected pre-activation was <= 0.
    """
    docs, argmax, pooled, h = cache
    d = d_pooled[None] if d_pooled.ndim == 1 else d_pooled
    return kernels.conv_pool_backward(docs, argmax, pooled, d.astype(docs.dtype, copy=False), h)


# --------------------------------------------------------------------------
# dense layers
# --------------------------------------------------------------------------

def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray, activation: str = "identity"):
    """y = act(x @ W + b) with act in {relu, identity}; x is (n,) or (B, n)."""
    if activation not in ("relu", "identity"):
        raise ValueError(f"unknown activation {activation!r}")
    if x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ValueError(f"shape mismatch: x {x.shape}, W {W.shape}, b {b.shape}")
    z = x @ W + b
    y = np.maximum(z, 0) if activation == "relu" else z
    return y, (x, z, W, activation)


def dense_backward(cache, dy: np.ndarray):
    """Returns (dx, dW, db) for the cached dense forward."""
    x, z, W, activation = cache
    dz = dy * (z > 0) if activation == "relu" else dy
    if x.ndim == 1:
        dW = np.outer(x, dz)
        db = dz.copy()
    else:
        dW = x.T @ dz
        db = dz.sum(axis=0)
    dx = dz @ W.T
    return dx, dW.astype(x.dtype, copy=False), db.astype(x.dtype, copy=False)


# --------------------------------------------------------------------------
# softmax / cross-entropy
# --------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax over the last axis; rejects NaN input."""
    if np.isnan(logits).any():
        raise NumericError("softmax input contains NaN")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(p: np.ndarray, gold) -> float:
    """Mean negative log-probability of the gold class (labels in 1..3).

    p_gold is clamped at 1e-12 so a zero probability yields a large finite
    loss instead of -inf.
    """
    probs = p[None] if p.ndim == 1 else p
    labels = np.atleast_1d(np.asarray(gold, dtype=np.int64))
    picked = probs[np.arange(len(labels)), labels - 1]
    return float(-np.log(np.maximum(picked, 1e-12)).mean())


def softmax_cross_entropy_backward(probs: np.ndarray, gold) -> np.ndarray:
    """d(mean cross-entropy)/d(logits) = (p - onehot) / batch_size."""
    labels = np.atleast_1d(np.asarray(gold, dtype=np.int64))
    p = probs[None] if probs.ndim == 1 else probs
    grad = p.astype(p.dtype, copy=True)
    grad[np.arange(len(labels)), labels - 1] -= 1
    grad /= len(labels)
    return grad[0] if probs.ndim == 1 else grad


# --------------------------------------------------------------------------
# dropout
# --------------------------------------------------------------------------

def dropout(x: np.ndarray, keep_prob: float, rng: Rng = None, training: bool = False):
    """Inverted dropout: kept entries are scaled by 1/keep_prob.

    Returns (y, mask) where mask already includes the scaling (entries are 0
    or 1/keep_prob); backward is a multiply by the same mask. At inference y
    is x itself, untouched, with mask None.
    """
    if not 0 < keep_prob <= 1:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    if not training:
        return x, None
    if keep_prob == 1.0:
        return x, np.ones_like(x)
    mask = (rng.random(x.shape) < keep_prob).astype(x.dtype)
    mask /= np.asarray(keep_prob, dtype=x.dtype)
    return x * mask, mask


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment estimates per parameter tensor plus step count."""

    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: dict, beta2: float, beta1: float = 0.9,
                   epsilon: float = 1e-8) -> "AdamState":
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValueError("beta1 and beta2 must be in (0, 1)")
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on params and state."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for tensor {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * np.square(g)
        p -= (lr / bc1) * m / (np.sqrt(v / bc2) + state.epsilon)
