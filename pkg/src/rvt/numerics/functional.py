"""Differentiable kernels used by the model: softmax, normalisation, GELU,
convolution, pooling and the classification loss."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from rvt.errors import ConfigError, DimensionError, NumericDomainError
from rvt.numerics.tensor import Tensor, _make, add, matmul, mean, reshape, take

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as ``[in, out]``."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    if not np.all(np.isfinite(xd)):
        raise NumericDomainError("softmax received non-finite input")
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), backward_fn, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    if not np.all(np.isfinite(xd)):
        raise NumericDomainError("log_softmax received non-finite input")
    shifted = xd - xd.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward_fn(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward_fn, "log_softmax")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise DimensionError(f"logits {logits.shape} do not match {labels.shape[0]} labels")
    batch, classes = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise IndexError(f"labels must lie in [0, {classes}), got range [{labels.min()}, {labels.max()}]")
    xd = logits.data
    if not np.all(np.isfinite(xd)):
        raise NumericDomainError("cross_entropy received non-finite logits")
    shifted = xd - xd.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(batch)
    loss = np.asarray(-logp[rows, labels].mean(), dtype=xd.dtype)

    def backward_fn(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return (grad * (g / batch),)

    return _make(loss, (logits,), backward_fn, "cross_entropy")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise over the last axis, then apply the per-channel affine map."""
    channels = x.shape[-1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(f"affine params {gamma.shape}/{beta.shape} do not match {channels} channels")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    gd = gamma.data
    lead = tuple(range(xd.ndim - 1))

    def backward_fn(g):
        dxhat = g * gd
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gd + beta.data, (x, gamma, beta), backward_fn, "layer_norm")


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU: ``x * Phi(x)``."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
    return _make((xd * cdf).astype(xd.dtype), (x,), lambda g: (g * (cdf + xd * pdf),), "gelu")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Cross-correlation of ``x[B, C_in, H, W]`` with ``weight[C_out, C_in/groups, k, k]``."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    if x.dtype != weight.dtype:
        raise TypeError("conv2d operands must share a dtype")
    batch, c_in, height, width = x.shape
    c_out, c_per_group, kh, kw = weight.shape
    if c_in % groups or c_out % groups:
        raise ConfigError(f"channels ({c_in} in, {c_out} out) not divisible by groups={groups}")
    if c_per_group != c_in // groups:
        raise DimensionError(f"weight expects {c_per_group} channels per group, input gives {c_in // groups}")
    h_out = (height + 2 * padding - kh) // stride + 1
    w_out = (width + 2 * padding - kw) // stride + 1
    if h_out <= 0 or w_out <= 0:
        raise ConfigError(f"conv2d output extent would be {h_out}x{w_out}")

    o_per_group = c_out // groups
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    xg = xp.reshape(batch, groups, c_per_group, xp.shape[2], xp.shape[3])
    wg = weight.data.reshape(groups, o_per_group, c_per_group, kh, kw)
    depthwise = c_per_group == 1 and o_per_group == 1
    h_span, w_span = stride * (h_out - 1) + 1, stride * (w_out - 1) + 1

    def window(arr, i, j):
        return arr[..., i : i + h_span : stride, j : j + w_span : stride]

    out = np.zeros((batch, groups, o_per_group, h_out, w_out), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = window(xg, i, j)
            if depthwise:
                out += patch * wg[:, 0, 0, i, j].reshape(1, groups, 1, 1, 1)
            else:
                out += np.einsum("bgchw,goc->bgohw", patch, wg[..., i, j])
    out = out.reshape(batch, c_out, h_out, w_out)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward_fn(g):
        gg = g.reshape(batch, groups, o_per_group, h_out, w_out)
        dxg = np.zeros_like(xg)
        dwg = np.zeros_like(wg)
        for i in range(kh):
            for j in range(kw):
                patch = window(xg, i, j)
                if depthwise:
                    dwg[:, 0, 0, i, j] = (gg * patch).sum(axis=(0, 2, 3, 4))
                    window(dxg, i, j)[...] += gg * wg[:, 0, 0, i, j].reshape(1, groups, 1, 1, 1)
                else:
                    dwg[..., i, j] = np.einsum("bgohw,bgchw->goc", gg, patch)
                    window(dxg, i, j)[...] += np.einsum("bgohw,goc->bgchw", gg, wg[..., i, j])
        dx = dxg.reshape(xp.shape)[:, :, padding : padding + height, padding : padding + width]
        grads = [np.ascontiguousarray(dx), dwg.reshape(weight.shape)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward_fn, "conv2d")


def replicate_pad_to_multiple(x: Tensor, multiple: int, axes=(-2, -1)) -> Tensor:
    """Edge-replicate on the high side of each axis up to a multiple of ``multiple``."""
    for axis in axes:
        n = x.shape[axis]
        target = -(-n // multiple) * multiple
        if target != n:
            x = take(x, np.minimum(np.arange(target), n - 1), axis=axis)
    return x


def avg_pool2d(x: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping ``kernel x kernel`` mean pooling of ``x[B, C, H, W]``.

    Odd extents are right/bottom padded by edge replication first.
    """
    x = replicate_pad_to_multiple(x, kernel)
    b, c, h, w = x.shape
    blocks = reshape(x, (b, c, h // kernel, kernel, w // kernel, kernel))
    return mean(blocks, axis=(3, 5))
