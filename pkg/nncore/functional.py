"""
Forward and backward kernels for every layer kind, plus the classification loss.

Conventions:
    - All arrays are float64.
    - Dense, p-norm, relu and softmax act on the last axis and accept any
      leading batch/time axes.
    - conv2d and maxpool2d take [N, C, H(time), W(freq)].
    - timedelay and crop take [N, T, d]; timedelay also accepts
      [N, C, T, F], merging channels and frequency per time step.
    - Each `*_forward` returns (output, cache); each `*_backward` takes the
      upstream gradient and that cache.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from core.exceptions import DimensionError, LabelError


def _require(condition, message):
    if not condition:
        raise DimensionError(f"dimension error: {message}")


# Dense

def dense_forward(x, W, b):
    """y = x W^T + b over the last axis; W is [out_dim, in_dim]."""
    _require(x.shape[-1] == W.shape[1], f"input width {x.shape[-1]} != in_dim {W.shape[1]}")
    return x @ W.T + b, (x, W)


def dense_backward(grad_out, cache):
    """
    Returns:
        tuple: (grad_x, grad_W, grad_b)
    """
    x, W = cache
    _require(grad_out.shape[-1] == W.shape[0], "gradient width does not match out_dim")
    flat_x = x.reshape(-1, x.shape[-1])
    flat_g = grad_out.reshape(-1, grad_out.shape[-1])
    return grad_out @ W, flat_g.T @ flat_x, flat_g.sum(axis=0)


# Convolution (valid, no padding)

def conv2d_output_size(size, kernel, stride):
    return (size - kernel) // stride + 1


def conv2d_forward(x, W, b, stride=1):
    """
    Valid 2-D convolution (cross-correlation).

    Args:
        x (np.ndarray): [N, C_in, H, W] input.
        W (np.ndarray): [C_out, C_in, kh, kw] kernels.
        b (np.ndarray): [C_out] biases.
        stride (int): Same stride on both axes.
    """
    _require(x.ndim == 4, f"conv2d expects [N, C, H, W], got {x.shape}")
    _require(x.shape[1] == W.shape[1], f"{x.shape[1]} channels != in_channels {W.shape[1]}")
    kh, kw = W.shape[2], W.shape[3]
    _require(kh <= x.shape[2] and kw <= x.shape[3],
             f"kernel {kh}x{kw} larger than input {x.shape[2]}x{x.shape[3]}")
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    y = np.einsum("nchwij,ocij->nohw", windows, W, optimize=True)
    return y + b[None, :, None, None], (x, W, stride)


def conv2d_backward(grad_out, cache):
    x, W, stride = cache
    kh, kw = W.shape[2], W.shape[3]
    out_h, out_w = grad_out.shape[2], grad_out.shape[3]
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    grad_W = np.einsum("nohw,nchwij->ocij", grad_out, windows, optimize=True)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    grad_x = np.zeros_like(x)
    for i in range(kh):
        for j in range(kw):
            contribution = np.einsum("nohw,oc->nchw", grad_out, W[:, :, i, j], optimize=True)
            grad_x[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += contribution
    return grad_x, grad_W, grad_b


# Max pooling (non-overlapping)

def maxpool2d_forward(x, pool_h, pool_w):
    """
    Per-window maximum; ties go to the first element in row-major order.
    """
    _require(x.ndim == 4, f"maxpool2d expects [N, C, H, W], got {x.shape}")
    n, c, h, w = x.shape
    _require(h % pool_h == 0 and w % pool_w == 0,
             f"input {h}x{w} not divisible by pool {pool_h}x{pool_w}")
    blocks = x.reshape(n, c, h // pool_h, pool_h, w // pool_w, pool_w)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // pool_h, w // pool_w, -1)
    argmax = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
    return y, (x.shape, pool_h, pool_w, argmax)


def maxpool2d_backward(grad_out, cache):
    shape, pool_h, pool_w, argmax = cache
    n, c, h, w = shape
    blocks = np.zeros(argmax.shape + (pool_h * pool_w,))
    np.put_along_axis(blocks, argmax[..., None], grad_out[..., None], axis=-1)
    blocks = blocks.reshape(n, c, h // pool_h, w // pool_w, pool_h, pool_w)
    return blocks.transpose(0, 1, 2, 4, 3, 5).reshape(shape)


# Time delay (splice)

def _as_sequence(x):
    if x.ndim == 4:
        n, c, t, f = x.shape
        return x.transpose(0, 2, 1, 3).reshape(n, t, c * f)
    _require(x.ndim == 3, f"timedelay expects [N, T, d] or [N, C, T, F], got {x.shape}")
    return x


def timedelay_indices(n_frames, offsets):
    """[T x len(offsets)] source rows, clamped to [0, T - 1]."""
    return np.clip(np.arange(n_frames)[:, None] + np.asarray(offsets)[None, :], 0, n_frames - 1)


def timedelay_forward(x, offsets):
    """
    Row t of the output is the concatenation of input rows t + o for o in
    `offsets`, with out-of-range rows clamped to the first/last row.
    """
    seq = _as_sequence(x)
    n, t, d = seq.shape
    _require(t >= 1 and d >= 1, "empty input")
    index = timedelay_indices(t, offsets)
    y = seq[:, index, :].reshape(n, t, len(offsets) * d)
    return y, (x.shape, index)


def timedelay_backward(grad_out, cache):
    shape, index = cache
    n = shape[0]
    t, k = index.shape
    d = grad_out.shape[-1] // k
    grads = grad_out.reshape(n, t, k, d)
    grad_seq = np.zeros((n, t, d))
    for j in range(k):
        np.add.at(grad_seq, (slice(None), index[:, j]), grads[:, :, j, :])
    if len(shape) == 4:
        _, c, _, f = shape
        return grad_seq.reshape(n, t, c, f).transpose(0, 2, 1, 3)
    return grad_seq


# Crop (drop edge frames)

def crop_forward(x, left, right):
    _require(x.ndim == 3, f"crop expects [N, T, d], got {x.shape}")
    t = x.shape[1]
    _require(t > left + right, f"{t} frames cannot be cropped by {left}+{right}")
    return x[:, left:t - right, :], (x.shape, left, right)


def crop_backward(grad_out, cache):
    shape, left, right = cache
    grad_x = np.zeros(shape)
    grad_x[:, left:shape[1] - right, :] = grad_out
    return grad_x


# P-norm

def pnorm_forward(x, group_size, p=2.0):
    """y_j = (sum over group j of |x_i|^p)^(1/p) on the last axis."""
    _require(x.shape[-1] % group_size == 0,
             f"width {x.shape[-1]} not divisible by group size {group_size}")
    groups = x.reshape(x.shape[:-1] + (x.shape[-1] // group_size, group_size))
    y = np.sum(np.abs(groups) ** p, axis=-1) ** (1.0 / p)
    return y, (groups, y, p, x.shape)


def pnorm_backward(grad_out, cache):
    """
    dy/dx_i = sign(x_i) |x_i|^(p-1) / y^(p-1); defined as 0 where y = 0.
    """
    groups, y, p, shape = cache
    safe = np.where(y > 0.0, y, 1.0)[..., None]
    local = np.sign(groups) * np.abs(groups) ** (p - 1.0) / safe ** (p - 1.0)
    local = np.where(y[..., None] > 0.0, local, 0.0)
    return (local * grad_out[..., None]).reshape(shape)


# Activations

def relu_forward(x):
    return np.maximum(x, 0.0), x


def relu_backward(grad_out, cache):
    return np.where(cache > 0.0, grad_out, 0.0)


def softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax_forward(x):
    y = softmax(x)
    return y, y


def softmax_backward(grad_out, cache):
    y = cache
    return y * (grad_out - np.sum(grad_out * y, axis=-1, keepdims=True))


# Loss

def softmax_cross_entropy(logits, labels):
    """
    Mean cross-entropy of softmax(logits) against integer labels.

    Args:
        logits (np.ndarray): [K] for one example or [N, K] for a batch.
        labels (int | np.ndarray): Class index, or [N] class indices.

    Raises:
        LabelError: A label is outside [0, K).

    Returns:
        tuple: (loss, grad_logits) where grad = (softmax - onehot) / N.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    batch = logits[None, :] if single else logits
    labels = np.atleast_1d(np.asarray(labels))
    n, k = batch.shape
    _require(labels.shape[0] == n, f"{labels.shape[0]} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"label error: labels must lie in [0, {k})")
    shifted = batch - batch.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_prob = shifted[np.arange(n), labels] - log_z
    loss = float(-log_prob.mean())
    grad = np.exp(shifted - log_z[:, None])
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, (grad[0] if single else grad)
