"""Forward and backward maps for the optical layer primitives.

Every function here operates on the trailing axes of its inputs so that a
single sample (shape ``(n,)`` or ``(H, W, C)``) and a minibatch (the same
with a leading batch axis) go through identical code.  Weight gradients of
batched calls are summed over the batch; the trainer divides by the batch
size to get the mean.

Feature maps are stored channels-last, ``(..., H, W, C)``.  Convolution
kernels are ``(out_channels, in_channels, k, k)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .neuron import CavityArray

__all__ = [
    "mvm_forward",
    "mvm_backward",
    "activation_forward",
    "activation_backward",
    "stochastic_forward",
    "stochastic_backward",
    "conv_forward",
    "conv_backward",
    "avg_pool_forward",
    "avg_pool_backward",
    "log_softmax",
    "output_head",
]


# ---------------------------------------------------------------------------
# Dense optical matrix-vector multiplication (SLM transmission weights)
# ---------------------------------------------------------------------------

def mvm_forward(w: np.ndarray, a_prev: np.ndarray) -> np.ndarray:
    """z_i = sum_j W_ij a_j for weight matrix w of shape (rows, cols)."""
    a_prev = np.asarray(a_prev, dtype=float)
    if a_prev.shape[-1] != w.shape[1]:
        raise ValueError(
            f"input has {a_prev.shape[-1]} amplitudes, weight matrix expects {w.shape[1]}"
        )
    return a_prev @ w.T


def mvm_backward(w: np.ndarray, d_z: np.ndarray, a_prev: np.ndarray):
    """Gradients through the linear map: returns (d_a_prev, d_w).

    d_a_prev_j = sum_i d_z_i W_ij and d_w_ij = d_z_i * a_j; for batched
    inputs d_w is summed over the batch.
    """
    d_z = np.asarray(d_z, dtype=float)
    a_prev = np.asarray(a_prev, dtype=float)
    if d_z.shape[-1] != w.shape[0] or a_prev.shape[-1] != w.shape[1]:
        raise ValueError("gradient/input shapes do not match the weight matrix")
    if d_z.shape[:-1] != a_prev.shape[:-1]:
        raise ValueError("batch shapes of d_z and a_prev differ")
    d_a_prev = d_z @ w
    if d_z.ndim == 1:
        d_w = np.outer(d_z, a_prev)
    else:
        d_w = d_z.reshape(-1, w.shape[0]).T @ a_prev.reshape(-1, w.shape[1])
    return d_a_prev, d_w


# ---------------------------------------------------------------------------
# Cavity-array activation
# ---------------------------------------------------------------------------

def activation_forward(cavities: CavityArray, z: np.ndarray) -> np.ndarray:
    """Apply each neuron's activation to its incident amplitude."""
    return cavities.activate(z)


def activation_backward(cavities: CavityArray, z: np.ndarray, d_a: np.ndarray) -> np.ndarray:
    """Chain rule through the activation: d_z_i = a'(z_i) * d_a_i."""
    d_a = np.asarray(d_a, dtype=float)
    if d_a.shape != np.shape(z):
        raise ValueError("gradient shape does not match the forward pre-activations")
    return cavities.derivative(z) * d_a


# ---------------------------------------------------------------------------
# Stochastic photon loss
# ---------------------------------------------------------------------------

def stochastic_forward(a: np.ndarray, pass_rate: float, rng: np.random.Generator):
    """Bernoulli photon transmission: each amplitude survives with probability P.

    Returns (masked amplitudes, the sampled 0/1 mask).  The mask must be
    recorded by the caller so the backward pass refers to the same draw.
    """
    if not 0.0 <= pass_rate <= 1.0:
        raise ValueError(f"pass rate must be in [0, 1], got {pass_rate}")
    a = np.asarray(a, dtype=float)
    mask = (rng.random(a.shape) < pass_rate).astype(float)
    return a * mask, mask


def stochastic_backward(d_masked: np.ndarray, pass_rate: float) -> np.ndarray:
    """Mean-field backward pass: the random mask is replaced by its mean P."""
    if not 0.0 <= pass_rate <= 1.0:
        raise ValueError(f"pass rate must be in [0, 1], got {pass_rate}")
    return pass_rate * np.asarray(d_masked, dtype=float)


# ---------------------------------------------------------------------------
# Optical convolution (cross-correlation, zero padding) and average pooling
# ---------------------------------------------------------------------------

def _conv_windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    # (..., H, W, C) -> (..., H', W', C, k, k)
    windows = sliding_window_view(x, (k, k), axis=(-3, -2))
    return windows[..., ::stride, ::stride, :, :, :]


def conv_forward(kernels: np.ndarray, x: np.ndarray, stride: int = 1) -> np.ndarray:
    """Valid cross-correlation of (..., H, W, C_in) with (C_out, C_in, k, k) kernels.

    Output spatial size is (H - k) // stride + 1 per side, channels last.
    """
    x = np.asarray(x, dtype=float)
    out_ch, in_ch, k, k2 = kernels.shape
    if k != k2:
        raise ValueError("kernels must be square")
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    if x.shape[-1] != in_ch:
        raise ValueError(f"input has {x.shape[-1]} channels, kernels expect {in_ch}")
    if x.shape[-3] < k or x.shape[-2] < k:
        raise ValueError(f"kernel size {k} exceeds input extent {x.shape[-3:-1]}")
    windows = _conv_windows(x, k, stride)
    return np.tensordot(windows, kernels, axes=[(-3, -2, -1), (1, 2, 3)])


def conv_backward(kernels: np.ndarray, x: np.ndarray, d_out: np.ndarray, stride: int = 1):
    """Exact gradients of conv_forward: returns (d_kernels, d_x).

    d_kernels is summed over any leading batch axes.
    """
    x = np.asarray(x, dtype=float)
    d_out = np.asarray(d_out, dtype=float)
    out_ch, in_ch, k, _ = kernels.shape
    expected = x.shape[:-3] + (
        (x.shape[-3] - k) // stride + 1,
        (x.shape[-2] - k) // stride + 1,
        out_ch,
    )
    if d_out.shape != expected:
        raise ValueError(f"output gradient has shape {d_out.shape}, expected {expected}")

    windows = _conv_windows(x, k, stride)
    # sum over batch and output positions: all axes of d_out except channels
    shared = list(range(d_out.ndim - 1))
    d_kernels = np.tensordot(d_out, windows, axes=[shared, shared])  # (C_out, C_in, k, k)

    d_x = np.zeros_like(x)
    # (..., H', W', C_in, k, k): per-position contribution fanned back out
    contrib = np.tensordot(d_out, kernels, axes=[(-1,), (0,)])
    n_rows, n_cols = d_out.shape[-3], d_out.shape[-2]
    for p in range(k):
        for q in range(k):
            d_x[
                ...,
                p : p + stride * n_rows : stride,
                q : q + stride * n_cols : stride,
                :,
            ] += contrib[..., p, q]
    return d_kernels, d_x


def avg_pool_forward(x: np.ndarray, pool: int = 2) -> np.ndarray:
    """Average over disjoint pool x pool blocks per channel (stride = pool)."""
    x = np.asarray(x, dtype=float)
    h, w = x.shape[-3], x.shape[-2]
    if h % pool or w % pool:
        raise ValueError(f"spatial dims {(h, w)} not divisible by pool size {pool}")
    shape = x.shape[:-3] + (h // pool, pool, w // pool, pool, x.shape[-1])
    return x.reshape(shape).mean(axis=(-4, -2))


def avg_pool_backward(d_out: np.ndarray, pool: int = 2) -> np.ndarray:
    """Distribute each pooled gradient uniformly over its pool x pool block."""
    d_out = np.asarray(d_out, dtype=float)
    spread = np.repeat(np.repeat(d_out, pool, axis=-3), pool, axis=-2)
    return spread / (pool * pool)


# ---------------------------------------------------------------------------
# Output head: LogSoftmax + negative log likelihood on the detector readings
# ---------------------------------------------------------------------------

def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable log softmax along the last axis."""
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def output_head(logits: np.ndarray, labels):
    """Cross-entropy loss and its gradient at the detector logits.

    Returns (loss, d_logits, predicted).  For a single logit vector the
    loss is a scalar; for a batch it is the per-sample loss vector, and
    d_logits holds the per-sample gradients softmax(z) - onehot(label).
    """
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    n_classes = logits.shape[-1]
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    if labels.shape != logits.shape[:-1]:
        raise ValueError("label shape must match the logit batch shape")

    lp = log_softmax(logits)
    d_logits = np.exp(lp)
    if logits.ndim == 1:
        loss = -lp[labels]
        d_logits[labels] -= 1.0
    else:
        loss = -np.take_along_axis(lp, labels[..., None], axis=-1)[..., 0]
        d_logits.reshape(-1, n_classes)[np.arange(labels.size), labels.ravel()] -= 1.0
    predicted = np.argmax(logits, axis=-1)
    return loss, d_logits, predicted
