"""Adversarial attacks, synthetic corruptions and robustness metrics."""

from rvt.robustness.attacks import ATTACKS, AttackConfig, feasible_box, fgsm_attack, input_gradient, pgd_attack
from rvt.robustness.corruptions import CORRUPTION_KINDS, SEVERITY_TABLES, CorruptionSpec, corrupt
from rvt.robustness.metrics import EvalReport, compute_mce, corruption_errors, evaluate, predict, write_mce

__all__ = [
    "ATTACKS",
    "AttackConfig",
    "CORRUPTION_KINDS",
    "CorruptionSpec",
    "EvalReport",
    "SEVERITY_TABLES",
    "compute_mce",
    "corrupt",
    "corruption_errors",
    "evaluate",
    "feasible_box",
    "fgsm_attack",
    "input_gradient",
    "pgd_attack",
    "predict",
    "write_mce",
]
