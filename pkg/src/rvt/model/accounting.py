"""Analytic parameter and multiply-accumulate counts.

MAC conventions: a ``[M, K] x [K, N]`` product costs ``M*K*N``; a convolution
costs ``C_out * C_in/groups * k^2 * H_out * W_out``; attention over ``n``
tokens costs ``2 * n^2 * d`` per head (scores plus weighted sum).  Bias adds,
normalisation, activations, softmax and pooling averages are not counted.
"""

from __future__ import annotations

import math

from rvt.model.config import ModelConfig
from rvt.model.layers import stem_widths
from rvt.model.network import parameter_shapes


def count_params(cfg: ModelConfig) -> int:
    return sum(math.prod(shape) for shape, _ in parameter_shapes(cfg).values())


def flops_breakdown(cfg: ModelConfig, resolution: int | None = None) -> dict[str, int]:
    """MACs per component group at ``resolution`` (defaults to ``cfg.image_size``)."""
    if resolution is not None and resolution != cfg.image_size:
        cfg = cfg.replace(image_size=resolution)
    s = cfg.stage
    active = s.active
    grids = cfg.stage_grids()
    has_cls = cfg.head_kind == "cls_token"
    c0 = s.channels[active[0]]
    out = {"embed": 0, "attention_proj": 0, "attention_core": 0, "ffn": 0, "pool": 0, "head": 0}

    gh, gw = grids[active[0]]
    if cfg.embed_kind == "linear":
        out["embed"] = gh * gw * 3 * cfg.patch_size**2 * c0
    else:
        side, c_in = cfg.image_size, 3
        for width in stem_widths(c0, cfg.stem_convs):
            side //= 2
            out["embed"] += width * c_in * 9 * side * side
            c_in = width
        out["embed"] += gh * gw * c_in * c0

    prev = active[0]
    for _, i in cfg.block_layout():
        while prev < i:
            prev += 1
            h, w = grids[prev]
            out["pool"] += h * w * s.channels[prev - 1] * s.channels[prev]
        c = s.channels[i]
        h, w = grids[i]
        n = h * w + (1 if has_cls else 0)
        hidden = cfg.ffn_expansion * c
        span = cfg.attn_window**2 if cfg.attn_window else n
        out["attention_proj"] += 4 * n * c * c
        out["attention_core"] += 2 * n * span * c
        out["ffn"] += 2 * n * c * hidden
        if cfg.ffn_kind == "conv":
            out["ffn"] += hidden * 9 * h * w
    out["head"] = s.channels[active[-1]] * cfg.num_classes
    return out


def count_flops(cfg: ModelConfig, resolution: int | None = None) -> int:
    return sum(flops_breakdown(cfg, resolution).values())
