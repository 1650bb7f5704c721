"""Self-attention: scaled dot-product, position-aware scaling, multi-head
assembly, local windows and absolute position encodings."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from rvt.errors import ConfigError, DimensionError, UnsupportedFeatureError
from rvt.numerics import Tensor, linear, matmul, mul, reshape, softmax, take, transpose

POSITION_KINDS = ("none", "learned_absolute", "sincos_absolute", "paas")
_UNSUPPORTED_POSITION_KINDS = ("learned_relative", "input_conditioned")


def _check_qkv(q: Tensor, k: Tensor, v: Tensor) -> None:
    if q.ndim < 2 or q.shape != k.shape or q.shape != v.shape:
        raise DimensionError(f"Q/K/V shapes must match and be [..., N, d]: {q.shape}, {k.shape}, {v.shape}")


def attention_logits(q: Tensor, k: Tensor, w_p: Tensor | None = None) -> Tensor:
    """Pre-softmax scores: ``QK^T / sqrt(d)`` or ``QK^T * (W_p / sqrt(d))``.

    Both paths multiply by the same rounded ``1/sqrt(d)``, so an all-ones
    ``w_p`` reproduces the plain scores bit for bit.
    """
    n, d = q.shape[-2], q.shape[-1]
    inv_scale = q.dtype.type(1.0 / math.sqrt(d))
    scores = matmul(q, transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)))
    if w_p is None:
        return mul(scores, inv_scale)
    if w_p.shape[-2:] != (n, n):
        raise DimensionError(f"position importance matrix {w_p.shape} does not match {n} tokens")
    return mul(scores, mul(w_p, inv_scale))


def sdp_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """``softmax(QK^T / sqrt(d)) V`` over the key axis; inputs are ``[..., N, d]``."""
    _check_qkv(q, k, v)
    return matmul(softmax(attention_logits(q, k)), v)


def paas_attention(q: Tensor, k: Tensor, v: Tensor, w_p: Tensor) -> Tensor:
    """``softmax(QK^T * (W_p / sqrt(d))) V`` with a learnable ``W_p[..., N, N]``."""
    _check_qkv(q, k, v)
    return matmul(softmax(attention_logits(q, k, w_p)), v)


def init_paas(heads: int, tokens: int, dtype=np.float32) -> Tensor:
    """Position importance matrices, one per head, starting at all-ones."""
    return Tensor(np.ones((heads, tokens, tokens), dtype=dtype), requires_grad=True)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, c = x.shape
    return transpose(reshape(x, (b, n, heads, c // heads)), (0, 2, 1, 3))


def mhsa_forward(x: Tensor, params: Mapping[str, Tensor], heads: int, w_p: Tensor | None = None) -> Tensor:
    """Multi-head self-attention on ``x[N, C]`` or ``x[B, N, C]``.

    ``params`` holds ``q_w, k_w, v_w, o_w`` (``[C, C]``, stored in→out) and
    optional matching ``*_b`` biases.  ``w_p``, if given, is ``[heads, N, N]``
    and switches every head to position-aware scaling.
    """
    if heads <= 0 or x.shape[-1] % heads:
        raise ConfigError(f"channels {x.shape[-1]} not divisible by {heads} heads")
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    b, n, c = x.shape
    q, k, v = (_split_heads(linear(x, params[f"{p}_w"], params.get(f"{p}_b")), heads) for p in "qkv")
    if w_p is not None:
        if w_p.shape != (heads, n, n):
            raise DimensionError(f"position importance {w_p.shape} != ({heads}, {n}, {n})")
        ctx = paas_attention(q, k, v, w_p)
    else:
        ctx = sdp_attention(q, k, v)
    merged = reshape(transpose(ctx, (0, 2, 1, 3)), (b, n, c))
    out = linear(merged, params["o_w"], params.get("o_b"))
    return reshape(out, (n, c)) if squeeze else out


def local_window_attention(
    x: Tensor,
    params: Mapping[str, Tensor],
    window: int,
    heads: int,
    w_p: Tensor | None = None,
) -> Tensor:
    """Multi-head attention restricted to non-overlapping ``window x window`` cells.

    ``x`` is a token grid ``[H, W, C]`` or ``[B, H, W, C]``.  Grids that do not
    divide evenly are edge-replicated on the high side and cropped back.
    """
    if window <= 0:
        raise ConfigError(f"window must be positive, got {window}")
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    b, h, w, c = x.shape
    hp, wp = -(-h // window) * window, -(-w // window) * window
    if hp != h:
        x = take(x, np.minimum(np.arange(hp), h - 1), axis=1)
    if wp != w:
        x = take(x, np.minimum(np.arange(wp), w - 1), axis=2)
    nh, nw = hp // window, wp // window
    cells = reshape(x, (b, nh, window, nw, window, c))
    cells = reshape(transpose(cells, (0, 1, 3, 2, 4, 5)), (b * nh * nw, window * window, c))
    out = mhsa_forward(cells, params, heads, w_p)
    out = transpose(reshape(out, (b, nh, nw, window, window, c)), (0, 1, 3, 2, 4, 5))
    out = reshape(out, (b, hp, wp, c))
    if hp != h or wp != w:
        out = out[:, :h, :w, :]
    return reshape(out, (h, w, c)) if squeeze else out


def sincos_table(tokens: int, channels: int) -> np.ndarray:
    """Interleaved sin/cos table: even channels ``sin(pos*f_i)``, odd ``cos(pos*f_i)``."""
    if channels % 2:
        raise ConfigError(f"sin-cos encoding needs an even channel count, got {channels}")
    pos = np.arange(tokens, dtype=np.float64)[:, None]
    freq = 10000.0 ** (-np.arange(0, channels, 2, dtype=np.float64) / channels)
    table = np.empty((tokens, channels), dtype=np.float64)
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table


@dataclass
class PositionEncoding:
    kind: str
    table: Tensor | None = None

    def apply(self, x: Tensor) -> Tensor:
        """Add the table to ``x[..., N, C]`` (identity for table-free kinds)."""
        if self.table is None:
            return x
        if x.shape[-2:] != self.table.shape:
            raise DimensionError(f"position table {self.table.shape} does not match tokens {x.shape}")
        return x + self.table


def make_position_encoding(kind: str, tokens: int, channels: int, rng: np.random.Generator | None = None, dtype=np.float32) -> PositionEncoding:
    if kind in _UNSUPPORTED_POSITION_KINDS:
        raise UnsupportedFeatureError(f"position encoding {kind!r} is not implemented")
    if kind not in POSITION_KINDS:
        raise ConfigError(f"unknown position encoding {kind!r}; expected one of {POSITION_KINDS}")
    if kind == "learned_absolute":
        rng = rng if rng is not None else np.random.default_rng(0)
        table = rng.normal(0.0, 0.02, size=(tokens, channels)).astype(dtype)
        return PositionEncoding(kind, Tensor(table, requires_grad=True))
    if kind == "sincos_absolute":
        return PositionEncoding(kind, Tensor(sincos_table(tokens, channels).astype(dtype)))
    return PositionEncoding(kind)
