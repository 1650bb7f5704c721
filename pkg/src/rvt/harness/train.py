"""Minibatch training with cross-entropy, AdamW/SGD and per-image augmentation streams."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rvt.augmentation import augment_batch
from rvt.errors import DataError, NumericDomainError
from rvt.harness.config import OptimizerConfig, RunConfig
from rvt.harness.data import Dataset, load_dataset, make_synthetic_dataset
from rvt.model.checkpoint import save_checkpoint
from rvt.model.network import Model, build_model
from rvt.numerics import Tensor, backward, cross_entropy
from rvt.robustness.metrics import predict

log = logging.getLogger("rvt.train")


class Optimizer:
    """AdamW (decoupled decay) or SGD with momentum; decay skips 1-D parameters."""

    def __init__(self, params: list[tuple[str, Tensor]], cfg: OptimizerConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params}
        self.v = {n: np.zeros_like(p.data) for n, p in params} if cfg.kind == "adamw" else {}

    def step(self) -> None:
        c = self.cfg
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            decay = c.weight_decay if p.data.ndim > 1 else 0.0
            if c.kind == "adamw":
                m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
                v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
                m_hat = m / (1 - b1**self.t)
                v_hat = v / (1 - b2**self.t)
                update = m_hat / (np.sqrt(v_hat) + eps) + decay * p.data
            else:
                g = g + decay * p.data
                update = self.m[name] = c.momentum * self.m[name] + g
            p.data = (p.data - c.lr * update).astype(p.data.dtype)


def dataset_from_spec(spec: str, seed: int, size: int = 32) -> Dataset:
    """``synthetic:N`` generates N images per class; anything else is an RVTD path."""
    if spec.startswith("synthetic:"):
        try:
            n = int(spec.split(":", 1)[1])
        except ValueError:
            raise DataError(f"bad synthetic dataset spec {spec!r}; expected synthetic:N") from None
        return make_synthetic_dataset(seed, n, size=size)
    return load_dataset(spec)


def resolve_dataset(cfg: RunConfig) -> Dataset:
    return dataset_from_spec(cfg.dataset, cfg.seed, cfg.model.image_size)


def check_compatible(model: Model, ds: Dataset) -> None:
    _, h, w, _ = ds.images.shape
    if (h, w) != (model.cfg.image_size, model.cfg.image_size):
        raise DataError(f"dataset images are {h}x{w}, model expects {model.cfg.image_size}")
    if ds.num_classes != model.cfg.num_classes:
        raise DataError(f"dataset has {ds.num_classes} classes, model has {model.cfg.num_classes}")


@dataclass
class TrainResult:
    model: Model
    history: list[dict[str, float]] = field(default_factory=list)

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        cols = ["epoch", "loss", "train_acc", "clean_acc"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in self.history:
            w.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in cols})
        return buf.getvalue()


def train(cfg: RunConfig, dataset: Dataset | None = None, out_dir=None, dtype=np.float32) -> TrainResult:
    """Train ``cfg.model`` from scratch and (optionally) write artifacts to ``out_dir``.

    Per epoch the log records the mean minibatch loss, accuracy on the
    augmented minibatches and accuracy on the un-augmented training set.
    """
    ds = dataset if dataset is not None else resolve_dataset(cfg)
    model = build_model(cfg.model, seed=cfg.seed, dtype=dtype)
    check_compatible(model, ds)
    images = ds.as_float(dtype)
    labels = ds.labels.astype(np.int64)
    opt = Optimizer(list(model.named_parameters()), cfg.optimizer)
    result = TrainResult(model)
    bs = cfg.optimizer.batch
    for epoch in range(cfg.optimizer.epochs):
        order = np.random.default_rng([cfg.seed, epoch, 2**31 - 1]).permutation(len(ds))
        losses, correct = [], 0
        for start in range(0, len(order), bs):
            idx = order[start : start + bs]
            xb = augment_batch(images[idx], idx, cfg.aug, cfg.seed, epoch).astype(dtype)
            yb = labels[idx]
            model.zero_grad()
            logits = model(Tensor(xb))
            loss = cross_entropy(logits, yb)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericDomainError(f"loss became {value} at epoch {epoch}, batch starting {start}; lower the learning rate")
            backward(loss)
            opt.step()
            losses.append(value * len(idx))
            correct += int(np.sum(np.argmax(logits.data, axis=-1) == yb))
        clean_acc = float(np.mean(predict(model, images, bs) == labels))
        row = {"epoch": epoch, "loss": float(sum(losses) / len(ds)), "train_acc": correct / len(ds), "clean_acc": clean_acc}
        result.history.append(row)
        log.info("epoch %d loss %.4f train_acc %.4f clean_acc %.4f", epoch, row["loss"], row["train_acc"], clean_acc)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, out / "model.rvtw")
        (out / "metrics.csv").write_text(result.metrics_csv())
        (out / "config.json").write_text(cfg.to_json())
    return result
