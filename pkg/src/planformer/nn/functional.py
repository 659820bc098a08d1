"""Neural network operations built on the autodiff Tensor.

Convolution uses an im2col formulation with stride tricks; softmax and
layer normalization are primitives with hand-written backward rules so
their numerics stay stable for large logits.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .tensor import Tensor, _unbroadcast


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map over the last axis: x @ weight + bias."""
    return x @ weight + bias


# ---------------------------------------------------------------------------
# convolution (2D and 3D, kernel 3 per axis, stride 1)

def _im2col(x: np.ndarray, k: int, padding: int) -> tuple[np.ndarray, tuple[int, ...]]:
    """x: (B, C, *spatial) -> columns (B, prod(out_spatial), C * k**rank)."""
    rank = x.ndim - 2
    if padding:
        pad = [(0, 0), (0, 0)] + [(padding, padding)] * rank
        x = np.pad(x, pad)
    b, c = x.shape[:2]
    spatial = x.shape[2:]
    out_spatial = tuple(s - k + 1 for s in spatial)
    shape = (b, c) + out_spatial + (k,) * rank
    strides = x.strides[:2] + x.strides[2:] + x.strides[2:]
    win = np.lib.stride_tricks.as_strided(x, shape=shape, strides=strides)
    # (B, out_spatial, C, k**rank)
    perm = (0,) + tuple(range(2, 2 + rank)) + (1,) + tuple(range(2 + rank, 2 + 2 * rank))
    cols = win.transpose(perm).reshape(b, int(np.prod(out_spatial)), c * k ** rank)
    return np.ascontiguousarray(cols), out_spatial


def _col2im(cols: np.ndarray, x_shape: tuple[int, ...], k: int, padding: int) -> np.ndarray:
    """Adjoint of _im2col: scatter column gradients back into input layout."""
    rank = len(x_shape) - 2
    b, c = x_shape[:2]
    padded = tuple(s + 2 * padding for s in x_shape[2:])
    out_spatial = tuple(s - k + 1 for s in padded)
    grad = np.zeros((b, c) + padded, dtype=cols.dtype)
    cols = cols.reshape((b,) + out_spatial + (c,) + (k,) * rank)
    for offs in itertools.product(range(k), repeat=rank):
        sl = (slice(None), slice(None)) + tuple(
            slice(o, o + s) for o, s in zip(offs, out_spatial))
        col_idx = (slice(None),) + (slice(None),) * rank + (slice(None),) + offs
        grad[sl] += np.moveaxis(cols[col_idx], -1, 1)
    if padding:
        inner = (slice(None), slice(None)) + tuple(
            slice(padding, padding + s) for s in x_shape[2:])
        grad = grad[inner]
    return grad


def conv(x: Tensor, kernels: Tensor, bias: Tensor, padding: int = 1) -> Tensor:
    """N-d convolution, kernel size 3 per axis, stride 1.

    x: (B, C_in, *spatial); kernels: (C_out, C_in, *3s); bias: (C_out,).
    With the default padding of 1 the spatial dims are unchanged.
    """
    k = kernels.shape[-1]
    rank = x.data.ndim - 2
    if kernels.data.shape[2:] != (k,) * rank or k != 3:
        raise ValueError(f"kernels must be 3^({rank}) per channel, got {kernels.shape}")
    if kernels.shape[1] != x.shape[1]:
        raise ValueError("kernel input channels do not match input")
    c_out = kernels.shape[0]
    cols, out_spatial = _im2col(x.data, k, padding)
    w2 = kernels.data.reshape(c_out, -1)  # (C_out, C_in * k**rank)
    out = cols @ w2.T + bias.data  # (B, cells, C_out)
    b = x.shape[0]
    out = np.moveaxis(out.reshape((b,) + out_spatial + (c_out,)), -1, 1)

    def back(g):
        gc = np.moveaxis(g, 1, -1).reshape(b, -1, c_out)  # (B, cells, C_out)
        g_w = np.einsum("bnc,bnk->ck", gc, cols).reshape(kernels.shape)
        g_b = gc.sum(axis=(0, 1))
        if x.requires_grad:
            g_x = _col2im(gc @ w2, x.data.shape, k, padding)
        else:
            g_x = None
        return g_x, g_w, g_b

    return Tensor._make(out, (x, kernels, bias), back)


# ---------------------------------------------------------------------------
# normalization and attention

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor._make(out, (x,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def back(g):
        g_beta = _unbroadcast(g, beta.shape)
        g_gamma = _unbroadcast(g * xhat, gamma.shape)
        gx_hat = g * gamma.data
        g_x = inv / n * (
            n * gx_hat
            - gx_hat.sum(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True)
        )
        return g_x, g_gamma, g_beta

    return Tensor._make(out, (x, gamma, beta), back)


def attention(q: Tensor, k: Tensor, v: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention: softmax(q kT / sqrt(d_k)) v.

    q, k, v: (..., S, d).  key_mask is a boolean array over key positions
    (..., S_k), True = valid.  Masked keys get exactly zero weight; a row with
    no valid key yields a zero output row.
    """
    d_k = q.shape[-1]
    if key_mask is not None and key_mask.all():
        key_mask = None  # nothing to mask; skip the extra graph nodes
    scores = (q @ k.transpose(*range(k.data.ndim - 2), k.data.ndim - 1, k.data.ndim - 2)) \
        * (1.0 / math.sqrt(d_k))
    if key_mask is not None:
        neg = np.where(key_mask, 0.0, -1e30)
        scores = scores + Tensor(neg[..., None, :])
    weights = softmax(scores, axis=-1)
    if key_mask is not None:
        # rows with no valid key come out of softmax as nan; define them as 0
        any_valid = key_mask.any(axis=-1)
        if not any_valid.all():
            fix = np.broadcast_to(any_valid[..., None, None], weights.shape)
            weights = weights * Tensor(np.where(fix, 1.0, 0.0))
    return weights @ v


def multi_head_attention(
    x_q: Tensor,
    x_kv: Tensor,
    wq: Tensor, bq: Tensor,
    wk: Tensor, bk: Tensor,
    wv: Tensor, bv: Tensor,
    wo: Tensor, bo: Tensor,
    n_head: int,
    head_dim: int,
    key_mask: np.ndarray | None = None,
) -> Tensor:
    """Multi-head attention: per-head scaled dot-product over projected inputs,
    concatenated and projected back to d_model.

    x_q: (B, S_q, d_model); x_kv: (B, S_k, d_model); projection weights map
    d_model -> n_head * head_dim; wo maps n_head * head_dim -> d_model.
    """
    b, s_q, _ = x_q.shape
    s_k = x_kv.shape[1]

    def split(x: Tensor, s: int) -> Tensor:
        return x.reshape(b, s, n_head, head_dim).transpose(0, 2, 1, 3)

    q = split(linear(x_q, wq, bq), s_q)
    k = split(linear(x_kv, wk, bk), s_k)
    v = split(linear(x_kv, wv, bv), s_k)
    mask = None if key_mask is None else key_mask[:, None, :]
    heads = attention(q, k, v, mask)  # (B, H, S_q, head_dim)
    concat = heads.transpose(0, 2, 1, 3).reshape(b, s_q, n_head * head_dim)
    return linear(concat, wo, bo)


# ---------------------------------------------------------------------------
# positional encoding and loss

def positional_encoding(coords, d_model: int) -> np.ndarray:
    """Sinusoidal encoding of a spatial position.

    2D: even index 2i carries sin(x / 10000^(2i/d_model)), odd index 2i+1
    carries cos(y / 10000^(2i/d_model)).  3D cycles the axes: index j reads
    coordinate j mod 3, alternating sin (even j) and cos (odd j) on the same
    frequency schedule.
    coords: (..., d_space) array-like; returns (..., d_model).
    """
    coords = np.asarray(coords, dtype=np.float64)
    d_space = coords.shape[-1]
    j = np.arange(d_model)
    freq = 10000.0 ** (-2.0 * (j // 2) / d_model)
    if d_space == 2:
        axis = j % 2
    elif d_space == 3:
        axis = j % 3
    else:
        raise ValueError("coords must have 2 or 3 components")
    phase = coords[..., axis] * freq
    even = j % 2 == 0
    return np.where(even, np.sin(phase), np.cos(phase))


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over every element (batch and coordinate dims)."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return (diff * diff).mean()
