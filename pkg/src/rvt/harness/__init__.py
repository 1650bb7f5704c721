"""Run configuration, dataset IO, training loop, gradient self-test and CLI."""

from rvt.harness.config import OptimizerConfig, RunConfig, load_config
from rvt.harness.data import Dataset, load_dataset, make_synthetic_dataset, parse_dataset, save_dataset
from rvt.harness.train import Optimizer, TrainResult, train

__all__ = [
    "Dataset",
    "Optimizer",
    "OptimizerConfig",
    "RunConfig",
    "TrainResult",
    "load_config",
    "load_dataset",
    "make_synthetic_dataset",
    "parse_dataset",
    "save_dataset",
    "train",
]
