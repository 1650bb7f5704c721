"""Parameter construction and the end-to-end forward pass."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from rvt.attention import make_position_encoding
from rvt.errors import ConfigError
from rvt.model import layers
from rvt.model.config import ModelConfig
from rvt.numerics import Tensor, concat, reshape


def parameter_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple[tuple[int, ...], str]]":
    """Name -> (shape, init rule) for every parameter, in a fixed order.

    Init rules: ``trunc`` (truncated normal, std 0.02), ``normal`` (N(0, 0.02^2)),
    ``zeros``, ``ones``.
    """
    s = cfg.stage
    active = s.active
    grids = cfg.stage_grids()
    c0 = s.channels[active[0]]
    has_cls = cfg.head_kind == "cls_token"
    shapes: OrderedDict[str, tuple[tuple[int, ...], str]] = OrderedDict()

    def lin(name, fan_in, fan_out):
        shapes[f"{name}.w"] = ((fan_in, fan_out), "trunc")
        shapes[f"{name}.b"] = ((fan_out,), "zeros")

    def norm(name, width):
        shapes[f"{name}.g"] = ((width,), "ones")
        shapes[f"{name}.b"] = ((width,), "zeros")

    if cfg.embed_kind == "linear":
        lin("embed.proj", 3 * cfg.patch_size**2, c0)
    else:
        width_in = 3
        for i, width in enumerate(layers.stem_widths(c0, cfg.stem_convs)):
            shapes[f"embed.conv{i}.w"] = ((width, width_in, 3, 3), "trunc")
            shapes[f"embed.conv{i}.b"] = ((width,), "zeros")
            norm(f"embed.norm{i}", width)
            width_in = width
        lin("embed.proj", width_in, c0)
    h0, w0 = grids[active[0]]
    tokens0 = h0 * w0 + (1 if has_cls else 0)
    if has_cls:
        shapes["cls_token"] = ((1, 1, c0), "trunc")
    if cfg.pos_kind == "learned_absolute":
        shapes["pos_embed"] = ((tokens0, c0), "normal")

    prev_stage = active[0]
    for k, i in cfg.block_layout():
        if i != prev_stage:
            for j in range(prev_stage + 1, i + 1):
                lin(f"pool{j}", s.channels[j - 1], s.channels[j])
            prev_stage = i
        c = s.channels[i]
        hidden = cfg.ffn_expansion * c
        p = f"blocks.{k}"
        norm(f"{p}.norm1", c)
        for name in ("q", "k", "v", "o"):
            shapes[f"{p}.attn.{name}_w"] = ((c, c), "trunc")
            shapes[f"{p}.attn.{name}_b"] = ((c,), "zeros")
        if cfg.paas_enabled(k):
            n = cfg.attn_window**2 if cfg.attn_window else grids[i][0] * grids[i][1] + (1 if has_cls else 0)
            shapes[f"{p}.attn.paas"] = ((s.heads[i], n, n), "ones")
        norm(f"{p}.norm2", c)
        shapes[f"{p}.ffn.w1"] = ((c, hidden), "trunc")
        shapes[f"{p}.ffn.b1"] = ((hidden,), "zeros")
        if cfg.ffn_kind == "conv":
            shapes[f"{p}.ffn.dw_w"] = ((hidden, 1, 3, 3), "trunc")
            shapes[f"{p}.ffn.dw_b"] = ((hidden,), "zeros")
        shapes[f"{p}.ffn.w2"] = ((hidden, c), "trunc")
        shapes[f"{p}.ffn.b2"] = ((c,), "zeros")
    c_last = s.channels[active[-1]]
    norm("head.norm", c_last)
    lin("head.fc", c_last, cfg.num_classes)
    return shapes


def init_parameters(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> "OrderedDict[str, Tensor]":
    rng = np.random.default_rng(seed)
    params: OrderedDict[str, Tensor] = OrderedDict()
    for name, (shape, rule) in parameter_shapes(cfg).items():
        if rule == "trunc":
            data = layers.truncated_normal(rng, shape, 0.02, dtype)
        elif rule == "normal":
            data = (rng.standard_normal(shape) * 0.02).astype(dtype)
        elif rule == "ones":
            data = np.ones(shape, dtype=dtype)
        else:
            data = np.zeros(shape, dtype=dtype)
        params[name] = Tensor(data, requires_grad=True)
    return params


class Model:
    """A configured network and its named parameters."""

    def __init__(self, cfg: ModelConfig, params: "OrderedDict[str, Tensor]"):
        expected = parameter_shapes(cfg)
        if list(params) != list(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ConfigError(f"parameter set does not match config (missing {missing}, unexpected {extra})")
        for name, (shape, _) in expected.items():
            if params[name].shape != shape:
                raise ConfigError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        self.cfg = cfg
        self.params = params

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.params.values())).dtype

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def astype(self, dtype) -> Model:
        params = OrderedDict((k, Tensor(v.data.astype(dtype), requires_grad=True)) for k, v in self.params.items())
        return Model(self.cfg, params)

    def __call__(self, img) -> Tensor:
        return forward(self, img)


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    return Model(cfg, init_parameters(cfg, seed, dtype))


def _prefixed(params, prefix: str) -> dict[str, Tensor]:
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


def forward(model: Model, img) -> Tensor:
    """Logits ``[B, num_classes]`` for images ``[B, 3, H, W]``."""
    cfg, params = model.cfg, model.params
    if not isinstance(img, Tensor):
        img = Tensor(np.asarray(img, dtype=model.dtype))
    if img.ndim != 4 or img.shape[1] != 3 or img.shape[2:] != (cfg.image_size, cfg.image_size):
        raise ConfigError(f"expected images [B, 3, {cfg.image_size}, {cfg.image_size}], got {img.shape}")
    s = cfg.stage
    active = s.active
    has_cls = cfg.head_kind == "cls_token"
    skip = 1 if has_cls else 0

    if cfg.embed_kind == "linear":
        x = layers.linear_patch_embed(img, params["embed.proj.w"], params["embed.proj.b"], cfg.patch_size)
        grid = cfg.stage_grids()[active[0]]
    else:
        x, grid = layers.conv_stem_embed(img, _prefixed(params, "embed."), cfg.stem_convs)
    if has_cls:
        b, _, c = x.shape
        cls = reshape(params["cls_token"], (1, 1, c))
        cls = concat([cls] * b, axis=0) if b > 1 else cls
        x = concat([cls, x], axis=1)
    if cfg.pos_kind == "learned_absolute":
        x = x + params["pos_embed"]
    elif cfg.pos_kind == "sincos_absolute":
        x = make_position_encoding("sincos_absolute", x.shape[1], x.shape[2], dtype=x.dtype).apply(x)

    prev_stage = active[0]
    for k, i in cfg.block_layout():
        while prev_stage < i:
            prev_stage += 1
            x, grid = layers.pool_between_stages(x, grid, params[f"pool{prev_stage}.w"], params[f"pool{prev_stage}.b"])
        x = layers.transformer_block_forward(
            x,
            _prefixed(params, f"blocks.{k}."),
            s.heads[i],
            grid,
            cfg.ffn_kind,
            cfg.attn_window,
            skip,
        )
    return layers.classification_head(x, cfg.head_kind, _prefixed(params, "head."), has_cls)
