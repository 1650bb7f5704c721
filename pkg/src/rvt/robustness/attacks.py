"""White-box L-infinity attacks (FGSM, PGD) on differentiable classifiers.

``epsilon`` and ``step_size`` are expressed in 1/255 pixel units on inputs in
[0, 1].  A model is any callable mapping a ``Tensor[B, ...]`` to logits.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from rvt.errors import ConfigError, NumericDomainError
from rvt.model.network import Model
from rvt.numerics import Tensor, backward, cross_entropy

PIXEL = 1.0 / 255.0


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 1.0
    steps: int = 5
    step_size: float = 0.5
    clamp: tuple[float, float] = (0.0, 1.0)
    random_start: bool = False

    def __post_init__(self):
        object.__setattr__(self, "clamp", tuple(float(v) for v in self.clamp))
        if self.epsilon < 0:
            raise ConfigError("attack.epsilon must be non-negative")
        if self.steps < 1:
            raise ConfigError("attack.steps must be at least 1")
        if self.step_size <= 0:
            raise ConfigError("attack.step_size must be positive")
        if self.clamp[0] > self.clamp[1]:
            raise ConfigError("attack.clamp must be an increasing pair")

    @property
    def eps(self) -> float:
        return self.epsilon * PIXEL

    @property
    def alpha(self) -> float:
        return self.step_size * PIXEL

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["clamp"] = list(self.clamp)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> AttackConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"attack: unknown keys {unknown}")
        return cls(**data)


def _frozen(model):
    """Evaluation view: parameters detached so only the input collects gradient."""
    if isinstance(model, Model):
        return Model(model.cfg, type(model.params)((k, Tensor(v.data)) for k, v in model.params.items()))
    return model


def input_gradient(model: Callable[[Tensor], Tensor], x: np.ndarray, y) -> tuple[np.ndarray, float]:
    """Gradient of the mean cross-entropy w.r.t. the input, and the loss value."""
    xt = Tensor(x, requires_grad=True)
    loss = cross_entropy(model(xt), y)
    backward(loss)
    g = xt.grad
    if not np.all(np.isfinite(g)):
        raise NumericDomainError("attack gradient is not finite")
    return g, loss.item()


def feasible_box(x: np.ndarray, eps: float, clamp: tuple[float, float]) -> tuple[np.ndarray, np.ndarray]:
    """Per-entry bounds of the eps-ball intersected with ``clamp``, rounded inward.

    Rounding toward ``x`` keeps ``|x_adv - x| <= eps`` exact when checked in
    float64, even though ``x`` lives in float32.
    """
    x64 = x.astype(np.float64)
    lo64 = np.maximum(x64 - eps, clamp[0])
    hi64 = np.minimum(x64 + eps, clamp[1])
    lo = lo64.astype(x.dtype)
    hi = hi64.astype(x.dtype)
    lo = np.where(lo.astype(np.float64) < lo64, np.nextafter(lo, np.asarray(np.inf, x.dtype)), lo)
    hi = np.where(hi.astype(np.float64) > hi64, np.nextafter(hi, np.asarray(-np.inf, x.dtype)), hi)
    return lo, hi


def _sign_step(x_cur: np.ndarray, grad: np.ndarray, alpha: float, box) -> np.ndarray:
    # sign cast to f64 first: a python float times an f32 array stays f32
    step = (x_cur.astype(np.float64) + alpha * np.sign(grad).astype(np.float64)).astype(x_cur.dtype)
    return np.clip(step, box[0], box[1])


def fgsm_attack(model, x: np.ndarray, y, cfg: AttackConfig) -> np.ndarray:
    """One signed-gradient step of size epsilon, then clamp."""
    x = np.asarray(x)
    if cfg.eps == 0:
        return x.copy()
    model = _frozen(model)
    grad, _ = input_gradient(model, x, y)
    return _sign_step(x, grad, cfg.eps, feasible_box(x, cfg.eps, cfg.clamp))


def pgd_attack(model, x: np.ndarray, y, cfg: AttackConfig, rng: np.random.Generator | None = None, trace: list | None = None) -> np.ndarray:
    """``steps`` signed-gradient ascent steps, each projected onto the ball and clamp box.

    ``trace``, if given, receives ``(iterate, loss_at_iterate)`` for every step
    including the final point.
    """
    x = np.asarray(x)
    if cfg.eps == 0:
        return x.copy()
    model = _frozen(model)
    box = feasible_box(x, cfg.eps, cfg.clamp)
    x_adv = x.copy()
    if cfg.random_start:
        rng = rng if rng is not None else np.random.default_rng(0)
        start = x.astype(np.float64) + rng.uniform(-cfg.eps, cfg.eps, size=x.shape)
        x_adv = np.clip(start.astype(x.dtype), box[0], box[1])
    for _ in range(cfg.steps):
        grad, loss = input_gradient(model, x_adv, y)
        if trace is not None:
            trace.append((x_adv.copy(), loss))
        x_adv = _sign_step(x_adv, grad, cfg.alpha, box)
    if trace is not None:
        trace.append((x_adv.copy(), cross_entropy(model(Tensor(x_adv)), y).item()))
    return x_adv


ATTACKS = {"fgsm": fgsm_attack, "pgd": pgd_attack}
