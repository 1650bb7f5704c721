"""Clean error, robust accuracy, corruption error grid and mCE."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from rvt.errors import DataError, UndefinedRatioError
from rvt.numerics import Tensor
from rvt.robustness.attacks import ATTACKS, AttackConfig
from rvt.robustness.corruptions import CORRUPTION_KINDS, CorruptionSpec, corrupt

CSV_COLUMNS = ("split", "kind", "severity", "error")


@dataclass
class EvalReport:
    """Top-1 errors of one model.

    ``corruption`` maps ``(kind, severity)`` to an error rate and
    ``robust_acc`` maps an attack label to accuracy on adversarial inputs.
    """

    clean_err: float
    corruption: dict[tuple[str, int], float] = field(default_factory=dict)
    robust_acc: dict[str, float] = field(default_factory=dict)
    attack_eps: dict[str, float] = field(default_factory=dict)

    def validate(self) -> None:
        values = [self.clean_err, *self.corruption.values(), *self.robust_acc.values()]
        if not all(0.0 <= v <= 1.0 for v in values):
            raise DataError("report entries must lie in [0, 1]")

    def kinds(self) -> list[str]:
        return sorted({k for k, _ in self.corruption})

    def severity_curve(self) -> list[float]:
        """Mean corruption error per severity, averaged over kinds."""
        sev = sorted({s for _, s in self.corruption})
        return [float(np.mean([e for (k, s2), e in self.corruption.items() if s2 == s])) for s in sev]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerow(["clean", "", 0, repr(float(self.clean_err))])
        for (kind, sev), err in sorted(self.corruption.items()):
            w.writerow(["corruption", kind, sev, repr(float(err))])
        # attack rows: severity column carries epsilon (1/255 units), error = 1 - robust accuracy
        for name, acc in sorted(self.robust_acc.items()):
            w.writerow(["attack", name, repr(float(self.attack_eps.get(name, 0.0))), repr(float(1.0 - acc))])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> EvalReport:
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != CSV_COLUMNS:
            raise DataError(f"report CSV must start with header {','.join(CSV_COLUMNS)}")
        clean = None
        report = cls(clean_err=0.0)
        for line, row in enumerate(rows[1:], start=2):
            if len(row) != 4:
                raise DataError(f"report CSV line {line}: expected 4 fields")
            split, kind, sev, err = row
            try:
                e = float(err)
                if split == "clean":
                    clean = e
                elif split == "corruption":
                    report.corruption[(kind, int(sev))] = e
                elif split == "attack":
                    report.robust_acc[kind] = 1.0 - e
                    report.attack_eps[kind] = float(sev)
                else:
                    raise DataError(f"report CSV line {line}: unknown split {split!r}")
            except ValueError as exc:
                raise DataError(f"report CSV line {line}: {exc}") from exc
        if clean is None:
            raise DataError("report CSV has no clean row")
        report.clean_err = clean
        report.validate()
        return report

    @classmethod
    def read_csv(cls, path) -> EvalReport:
        return cls.from_csv(Path(path).read_text())


def predict(model: Callable[[Tensor], Tensor], images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Arg-max class per image, evaluated in batches."""
    out = []
    for start in range(0, len(images), batch_size):
        logits = model(Tensor(images[start : start + batch_size])).data
        out.append(np.argmax(logits, axis=-1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.intp)


def _check_inputs(model, images: np.ndarray, labels: np.ndarray, num_classes: int | None) -> int:
    if len(images) == 0:
        raise DataError("evaluation set is empty")
    if len(images) != len(labels):
        raise DataError(f"{len(images)} images but {len(labels)} labels")
    if num_classes is None:
        num_classes = getattr(getattr(model, "cfg", None), "num_classes", None)
    if num_classes is None:
        num_classes = int(model(Tensor(images[:1])).shape[-1])
    if labels.min() < 0 or labels.max() >= num_classes:
        raise DataError(f"labels must lie in [0, {num_classes}), found range [{labels.min()}, {labels.max()}]")
    width = int(model(Tensor(images[:1])).shape[-1])
    if width != num_classes:
        raise DataError(f"model emits {width} logits but the data has {num_classes} classes")
    return num_classes


def attack_label(kind: str, cfg: AttackConfig) -> str:
    return f"{kind}_eps{cfg.epsilon:g}"


def evaluate(
    model: Callable[[Tensor], Tensor],
    images: np.ndarray,
    labels: np.ndarray,
    attacks: Sequence[tuple[str, AttackConfig]] = (),
    corruptions: Iterable[CorruptionSpec] | None = None,
    seed: int = 0,
    batch_size: int = 64,
    num_classes: int | None = None,
) -> EvalReport:
    """Evaluate ``model`` on clean, corrupted and adversarial versions of the set.

    ``images`` are float ``[B, 3, H, W]`` in [0, 1].  ``corruptions`` defaults
    to the full bank (every kind at every severity).  Corruption noise is drawn
    from a stream keyed by ``(seed, kind, severity, batch)``.
    """
    images = np.asarray(images)
    labels = np.asarray(labels).astype(np.int64)
    _check_inputs(model, images, labels, num_classes)
    report = EvalReport(clean_err=float(np.mean(predict(model, images, batch_size) != labels)))

    if corruptions is None:
        corruptions = [CorruptionSpec(k, s) for k in CORRUPTION_KINDS for s in range(1, 6)]
    for spec in corruptions:
        wrong = 0
        kind_id = CORRUPTION_KINDS.index(spec.kind)
        for b, start in enumerate(range(0, len(images), batch_size)):
            rng = np.random.default_rng([seed, kind_id, spec.severity, b])
            xc = corrupt(images[start : start + batch_size], spec, rng)
            wrong += int(np.sum(predict(model, xc, batch_size) != labels[start : start + batch_size]))
        report.corruption[(spec.kind, spec.severity)] = wrong / len(images)

    for a, (kind, cfg) in enumerate(attacks):
        attack = ATTACKS[kind]
        right = 0
        for b, start in enumerate(range(0, len(images), batch_size)):
            xb, yb = images[start : start + batch_size], labels[start : start + batch_size]
            if kind == "pgd":
                x_adv = attack(model, xb, yb, cfg, rng=np.random.default_rng([seed, 1000 + a, b]))
            else:
                x_adv = attack(model, xb, yb, cfg)
            right += int(np.sum(predict(model, x_adv, batch_size) == yb))
        name = attack_label(kind, cfg)
        report.robust_acc[name] = right / len(images)
        report.attack_eps[name] = float(cfg.epsilon)
    report.validate()
    return report


def corruption_errors(report: EvalReport, baseline: EvalReport) -> dict[str, float]:
    """Per-kind corruption error ``sum_s E_s / sum_s E_s^baseline``."""
    if set(report.corruption) != set(baseline.corruption):
        raise DataError("report and baseline cover different (kind, severity) grids")
    if not report.corruption:
        raise DataError("reports contain no corruption results")
    out = {}
    for kind in report.kinds():
        num = sum(e for (k, _), e in report.corruption.items() if k == kind)
        den = sum(e for (k, _), e in baseline.corruption.items() if k == kind)
        if den == 0:
            raise UndefinedRatioError(f"baseline errors for {kind!r} sum to zero")
        out[kind] = num / den
    return out


def compute_mce(report: EvalReport, baseline: EvalReport) -> float:
    """Mean over kinds of the baseline-normalised corruption error, times 100."""
    ce = corruption_errors(report, baseline)
    return 100.0 * sum(ce.values()) / len(ce)


def write_mce(value: float, path) -> None:
    Path(path).write_text(f"{value!r}\n")
