"""Functional building blocks: embedders, feed-forward variants, transformer
blocks, inter-stage pooling and classification heads.

Token tensors are ``[B, N, C]``; when a block needs spatial structure the
caller passes the token ``grid = (h, w)`` with ``h * w`` equal to the number
of patch tokens (a leading cls token, if any, is excluded).
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from rvt.attention import local_window_attention, mhsa_forward
from rvt.errors import ConfigError, DimensionError
from rvt.numerics import (
    Tensor,
    avg_pool2d,
    concat,
    conv2d,
    gelu,
    layer_norm,
    linear,
    mean,
    reshape,
    transpose,
)

Params = Mapping[str, Tensor]


def _sub(params: Params, prefix: str) -> dict[str, Tensor]:
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


def tokens_to_grid(tokens: Tensor, grid: tuple[int, int]) -> Tensor:
    """``[B, h*w, C]`` -> ``[B, C, h, w]``."""
    b, n, c = tokens.shape
    h, w = grid
    if n != h * w:
        raise ConfigError(f"{n} tokens do not form a {h}x{w} grid")
    return transpose(reshape(tokens, (b, h, w, c)), (0, 3, 1, 2))


def grid_to_tokens(x: Tensor) -> Tensor:
    """``[B, C, h, w]`` -> ``[B, h*w, C]``."""
    b, c, h, w = x.shape
    return reshape(transpose(x, (0, 2, 3, 1)), (b, h * w, c))


def linear_patch_embed(img: Tensor, weight: Tensor, bias: Tensor | None, patch: int = 16) -> Tensor:
    """Flatten each ``patch x patch`` cell (channel-major) and project it to ``C``."""
    b, c, h, w = img.shape
    if h % patch or w % patch:
        raise ConfigError(f"image {h}x{w} not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    cells = reshape(img, (b, c, gh, patch, gw, patch))
    cells = reshape(transpose(cells, (0, 2, 4, 1, 3, 5)), (b, gh * gw, c * patch * patch))
    return linear(cells, weight, bias)


def channel_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Layer norm over the channel axis of ``x[B, C, H, W]``."""
    y = layer_norm(transpose(x, (0, 2, 3, 1)), gamma, beta)
    return transpose(y, (0, 3, 1, 2))


def conv_stem_embed(img: Tensor, params: Params, convs: int) -> tuple[Tensor, tuple[int, int]]:
    """Stride-2 3x3 conv stack (norm + GELU after each), then a 1x1 projection.

    ``params`` keys: ``conv{i}.w``, ``conv{i}.b``, ``norm{i}.g``, ``norm{i}.b``
    for ``i < convs`` and ``proj.w`` / ``proj.b``.
    """
    b, c, h, w = img.shape
    stride = 2**convs
    if h % stride or w % stride:
        raise ConfigError(f"image {h}x{w} not divisible by stem stride {stride}")
    x = img
    for i in range(convs):
        x = conv2d(x, params[f"conv{i}.w"], params[f"conv{i}.b"], stride=2, padding=1)
        x = gelu(channel_norm(x, params[f"norm{i}.g"], params[f"norm{i}.b"]))
    grid = (x.shape[2], x.shape[3])
    return linear(grid_to_tokens(x), params["proj.w"], params["proj.b"]), grid


def stem_widths(channels: int, convs: int) -> list[int]:
    """Doubling conv widths that end at ``channels``."""
    return [max(channels >> (convs - 1 - i), 1) for i in range(convs)]


def ffn_forward(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    return linear(gelu(linear(x, w1, b1)), w2, b2)


def conv_ffn_forward(
    x: Tensor,
    grid: tuple[int, int],
    w1: Tensor,
    b1: Tensor,
    dw_w: Tensor,
    dw_b: Tensor,
    w2: Tensor,
    b2: Tensor,
    skip_tokens: int = 0,
) -> Tensor:
    """Pointwise expand, GELU, depthwise 3x3 over the grid, GELU, pointwise squeeze.

    The first ``skip_tokens`` tokens (a cls token) bypass the depthwise conv.
    """
    hidden = gelu(linear(x, w1, b1))
    width = hidden.shape[-1]
    if dw_w.shape != (width, 1, 3, 3):
        raise DimensionError(f"depthwise kernel {dw_w.shape} does not match hidden width {width}")
    spatial = hidden[:, skip_tokens:, :] if skip_tokens else hidden
    mixed = grid_to_tokens(conv2d(tokens_to_grid(spatial, grid), dw_w, dw_b, padding=1, groups=width))
    if skip_tokens:
        mixed = concat([hidden[:, :skip_tokens, :], mixed], axis=1)
    return linear(gelu(mixed), w2, b2)


def attention_forward(
    x: Tensor,
    params: Params,
    heads: int,
    grid: tuple[int, int],
    window: int | None = None,
    w_p: Tensor | None = None,
) -> Tensor:
    if window is None:
        return mhsa_forward(x, params, heads, w_p)
    b, n, c = x.shape
    h, w = grid
    out = local_window_attention(reshape(x, (b, h, w, c)), params, window, heads, w_p)
    return reshape(out, (b, n, c))


def transformer_block_forward(
    x: Tensor,
    params: Params,
    heads: int,
    grid: tuple[int, int],
    ffn_kind: str = "plain",
    window: int | None = None,
    skip_tokens: int = 0,
) -> Tensor:
    """Pre-norm residual block: ``x + attn(LN(x))`` then ``+ ffn(LN(.))``.

    Parameter names are relative to the block (``norm1.g``, ``attn.q_w``,
    ``ffn.w1``, ``attn.paas`` ...).
    """
    w_p = params.get("attn.paas")
    h = layer_norm(x, params["norm1.g"], params["norm1.b"])
    x = x + attention_forward(h, _sub(params, "attn."), heads, grid, window, w_p)
    h = layer_norm(x, params["norm2.g"], params["norm2.b"])
    f = _sub(params, "ffn.")
    if ffn_kind == "conv":
        out = conv_ffn_forward(h, grid, f["w1"], f["b1"], f["dw_w"], f["dw_b"], f["w2"], f["b2"], skip_tokens)
    else:
        out = ffn_forward(h, f["w1"], f["b1"], f["w2"], f["b2"])
    return x + out


def pool_between_stages(tokens: Tensor, grid: tuple[int, int], weight: Tensor, bias: Tensor) -> tuple[Tensor, tuple[int, int]]:
    """2x2 average pooling on the token grid, then a ``C_in -> C_out`` projection."""
    pooled = avg_pool2d(tokens_to_grid(tokens, grid), 2)
    new_grid = (pooled.shape[2], pooled.shape[3])
    return linear(grid_to_tokens(pooled), weight, bias), new_grid


def classification_head(tokens: Tensor, kind: str, params: Params, has_cls: bool) -> Tensor:
    """``gap``: mean over tokens; ``cls_token``: token 0.  Then LN and a linear classifier."""
    if kind == "cls_token":
        if not has_cls:
            raise ConfigError("cls_token readout requested on a model built without a cls token")
        feat = tokens[:, 0, :]
    elif kind == "gap":
        feat = mean(tokens[:, 1:, :] if has_cls else tokens, axis=1)
    else:
        raise ConfigError(f"unknown head kind {kind!r}")
    feat = layer_norm(feat, params["norm.g"], params["norm.b"])
    return linear(feat, params["fc.w"], params["fc.b"])


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal samples redrawn until they lie within two standard deviations."""
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return (z * std).astype(dtype)
