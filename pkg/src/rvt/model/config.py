"""Architecture description and presets.

Stage ``i`` (0-based) always runs at ``image_size / (4 * 2**i)``; a network
uses the contiguous run of stages with non-zero block counts, and the patch
embedder maps the image straight onto the first active stage's grid.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any

from rvt.attention import POSITION_KINDS
from rvt.errors import ConfigError

EMBED_KINDS = ("linear", "conv_stem")
FFN_KINDS = ("plain", "conv")
HEAD_KINDS = ("cls_token", "gap")
NUM_STAGES = 4
POOL_KERNEL = 2


def _strict_kwargs(cls, data: dict[str, Any], where: str) -> dict[str, Any]:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a JSON object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    return dict(data)


@dataclass(frozen=True)
class StageSpec:
    blocks: tuple[int, ...]
    channels: tuple[int, ...]
    heads: tuple[int, ...]
    head_dim: tuple[int, ...]

    def __post_init__(self):
        for name in ("blocks", "channels", "heads", "head_dim"):
            value = tuple(int(v) for v in getattr(self, name))
            if len(value) != NUM_STAGES:
                raise ConfigError(f"stage.{name} must list {NUM_STAGES} entries, got {len(value)}")
            object.__setattr__(self, name, value)

    @property
    def active(self) -> list[int]:
        """Indices from the first to the last stage holding blocks."""
        used = [i for i, n in enumerate(self.blocks) if n > 0]
        return list(range(used[0], used[-1] + 1)) if used else []

    @property
    def total_blocks(self) -> int:
        return sum(self.blocks)

    def to_dict(self) -> dict[str, Any]:
        return {k: list(getattr(self, k)) for k in ("blocks", "channels", "heads", "head_dim")}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> StageSpec:
        kwargs = _strict_kwargs(cls, data, "stage")
        missing = {"blocks", "channels", "heads", "head_dim"} - set(kwargs)
        if missing:
            raise ConfigError(f"stage: missing keys {sorted(missing)}")
        return cls(**kwargs)


@dataclass(frozen=True)
class ModelConfig:
    stage: StageSpec
    embed_kind: str = "linear"
    ffn_kind: str = "plain"
    pos_kind: str = "learned_absolute"
    head_kind: str = "gap"
    ffn_expansion: int = 4
    num_classes: int = 1000
    image_size: int = 224
    attn_window: int | None = None
    paas_blocks: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.paas_blocks is not None:
            object.__setattr__(self, "paas_blocks", tuple(int(i) for i in self.paas_blocks))
        problems = self.violations()
        if problems:
            raise ConfigError("invalid model config: " + "; ".join(problems))

    def violations(self) -> list[str]:
        s = self.stage
        out = []
        if any(n < 0 for n in s.blocks):
            out.append("block counts must be non-negative")
        if not s.active:
            out.append("at least one stage must contain blocks")
            return out
        for i in s.active:
            if s.channels[i] <= 0 or s.heads[i] <= 0:
                out.append(f"stage {i + 1}: channels and heads must be positive")
            elif s.channels[i] != s.heads[i] * s.head_dim[i]:
                out.append(f"stage {i + 1}: C={s.channels[i]} != heads {s.heads[i]} x head_dim {s.head_dim[i]}")
        if self.embed_kind not in EMBED_KINDS:
            out.append(f"embed_kind must be one of {EMBED_KINDS}")
        if self.ffn_kind not in FFN_KINDS:
            out.append(f"ffn_kind must be one of {FFN_KINDS}")
        if self.pos_kind not in POSITION_KINDS:
            out.append(f"pos_kind must be one of {POSITION_KINDS}")
        if self.head_kind not in HEAD_KINDS:
            out.append(f"head_kind must be one of {HEAD_KINDS}")
        if self.head_kind == "cls_token" and len(s.active) > 1:
            out.append("cls_token head requires a single-stage model")
        if self.ffn_expansion <= 0 or self.num_classes <= 0:
            out.append("ffn_expansion and num_classes must be positive")
        if self.image_size <= 0 or self.image_size % self.patch_size:
            out.append(f"image_size {self.image_size} not divisible by embedding stride {self.patch_size}")
        if self.attn_window is not None:
            if self.attn_window <= 0:
                out.append("attn_window must be positive")
            if self.head_kind == "cls_token":
                out.append("local-window attention cannot carry a cls token")
        if self.paas_blocks is not None:
            if self.pos_kind != "paas":
                out.append("paas_blocks given but pos_kind is not 'paas' (PAAS and absolute embeddings are exclusive)")
            elif any(i < 0 or i >= s.total_blocks for i in self.paas_blocks):
                out.append(f"paas_blocks must index blocks in [0, {s.total_blocks})")
        return out

    # -- derived geometry -------------------------------------------------
    @property
    def patch_size(self) -> int:
        """Stride from the image to the first active stage's grid."""
        active = self.stage.active
        return 4 * 2 ** active[0] if active else 0

    @property
    def stem_convs(self) -> int:
        """Number of stride-2 convolutions in the convolutional stem."""
        return self.patch_size.bit_length() - 1

    def stage_grids(self) -> dict[int, tuple[int, int]]:
        """Token grid ``(h, w)`` of every active stage, halving with ceil rounding."""
        side = self.image_size // self.patch_size
        grids = {}
        for i in self.stage.active:
            grids[i] = (side, side)
            side = -(-side // POOL_KERNEL)
        return grids

    def block_layout(self) -> list[tuple[int, int]]:
        """``(global_block_index, stage_index)`` in execution order."""
        layout, k = [], 0
        for i in self.stage.active:
            for _ in range(self.stage.blocks[i]):
                layout.append((k, i))
                k += 1
        return layout

    def paas_enabled(self, block: int) -> bool:
        if self.pos_kind != "paas":
            return False
        return self.paas_blocks is None or block in self.paas_blocks

    # -- serialisation ------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["stage"] = self.stage.to_dict()
        if self.paas_blocks is not None:
            d["paas_blocks"] = list(self.paas_blocks)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ModelConfig:
        kwargs = _strict_kwargs(cls, data, "model")
        if "stage" not in kwargs:
            raise ConfigError("model: missing 'stage'")
        kwargs["stage"] = StageSpec.from_dict(kwargs["stage"])
        return cls(**kwargs)

    def replace(self, **changes) -> ModelConfig:
        return dataclasses.replace(self, **changes)


# Per-stage dimensions of the DeiT-Ti family (channels, heads, head dim).
_FAMILY_CHANNELS = (48, 96, 192, 384)
_FAMILY_HEADS = (1, 2, 3, 6)
_FAMILY_HEAD_DIM = (48, 48, 64, 64)

STAGE_DISTRIBUTIONS = {
    "v1": (0, 0, 12, 0),
    "v2": (0, 0, 10, 2),
    "v3": (0, 2, 10, 0),
    "v4": (0, 2, 8, 2),
    "v5": (2, 2, 8, 0),
    "v6": (2, 2, 6, 2),
}


def variant(name: str, **overrides) -> ModelConfig:
    """DeiT-Ti stage-distribution variant ``v1`` ... ``v6``."""
    blocks = STAGE_DISTRIBUTIONS[name]
    stage = StageSpec(blocks, _FAMILY_CHANNELS, _FAMILY_HEADS, _FAMILY_HEAD_DIM)
    multi = sum(1 for n in blocks if n) > 1
    base = dict(
        stage=stage,
        embed_kind="linear",
        ffn_kind="plain",
        pos_kind="learned_absolute",
        head_kind="gap" if multi else "cls_token",
    )
    base.update(overrides)
    return ModelConfig(**base)


def with_heads(cfg: ModelConfig, heads: int) -> ModelConfig:
    """Re-split every active stage into ``heads`` heads at constant width."""
    s = cfg.stage
    new_heads = list(s.heads)
    new_dim = list(s.head_dim)
    for i in s.active:
        if s.channels[i] % heads:
            raise ConfigError(f"stage {i + 1}: {s.channels[i]} channels not divisible by {heads} heads")
        new_heads[i] = heads
        new_dim[i] = s.channels[i] // heads
    return cfg.replace(stage=StageSpec(s.blocks, s.channels, tuple(new_heads), tuple(new_dim)))


def _rvt_ti(**overrides) -> ModelConfig:
    cfg = with_heads(variant("v2"), 8).replace(
        embed_kind="conv_stem", ffn_kind="conv", head_kind="gap", pos_kind="paas"
    )
    return cfg.replace(**overrides) if overrides else cfg


def _tiny_rvt(**overrides) -> ModelConfig:
    cfg = ModelConfig(
        stage=StageSpec((1, 1, 0, 0), (64, 64, 0, 0), (4, 4, 0, 0), (16, 16, 0, 0)),
        embed_kind="conv_stem",
        ffn_kind="conv",
        pos_kind="paas",
        head_kind="gap",
        num_classes=4,
        image_size=32,
    )
    return cfg.replace(**overrides) if overrides else cfg


PRESETS = {
    "deit_ti": lambda: variant("v1"),
    **{name: (lambda name=name: variant(name)) for name in STAGE_DISTRIBUTIONS},
    "rvt_ti": _rvt_ti,
    "rvt_ti_no_paas": lambda: _rvt_ti(pos_kind="learned_absolute"),
    "tiny_rvt": _tiny_rvt,
}


def preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
