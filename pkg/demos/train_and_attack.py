"""Train the tiny preset briefly, then probe it with attacks and corruptions.

About a dozen epochs are enough for the synthetic bars task.  The untrained
initialisation serves as the mCE baseline, so values below 100 mean the
trained model degrades less under corruption than chance-level weights.

Run: python3 demos/train_and_attack.py   (about a minute and a half on one core)
"""

import numpy as np

from rvt.harness import OptimizerConfig, RunConfig, make_synthetic_dataset, train
from rvt.model import build_model, preset
from rvt.robustness import AttackConfig, compute_mce, evaluate

cfg = RunConfig(model=preset("tiny_rvt"), optimizer=OptimizerConfig(epochs=14), dataset="synthetic:64", seed=0)
result = train(cfg)
for row in result.history:
    print(f"epoch {row['epoch']:2d}  loss {row['loss']:.3f}  clean acc {row['clean_acc']:.3f}")

held = make_synthetic_dataset(seed=1, n_per_class=16)
x, y = held.as_float(), held.labels
attacks = [("fgsm", AttackConfig(epsilon=eps)) for eps in (1, 4, 8)] + [("pgd", AttackConfig(epsilon=4, steps=5, step_size=1))]
report = evaluate(result.model, x, y, attacks=attacks)
baseline = evaluate(build_model(cfg.model, seed=cfg.seed), x, y)

print(f"\nheld-out clean accuracy {1 - report.clean_err:.3f}")
for name, acc in report.robust_acc.items():
    print(f"  {name:12s} robust accuracy {acc:.3f}")
print("mean corruption error by severity:", np.round(report.severity_curve(), 3).tolist())
print(f"mCE against the untrained baseline: {compute_mce(report, baseline):.1f}")
