"""Network assembly, presets, accounting and checkpoints."""

from rvt.model.accounting import count_flops, count_params, flops_breakdown
from rvt.model.config import ModelConfig, StageSpec, preset, variant, with_heads
from rvt.model.network import Model, build_model, forward, parameter_shapes

__all__ = [
    "Model",
    "ModelConfig",
    "StageSpec",
    "build_model",
    "count_flops",
    "count_params",
    "flops_breakdown",
    "forward",
    "parameter_shapes",
    "preset",
    "variant",
    "with_heads",
]
