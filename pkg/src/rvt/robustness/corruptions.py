"""A small synthetic corruption bank with five severities per kind.

The severity tables are fixed constants of this package; they are a
stand-in for a full corruption benchmark, not a reproduction of one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rvt.errors import ConfigError

# kind -> distortion parameter for severities 1..5
SEVERITY_TABLES: dict[str, tuple[float, ...]] = {
    "gaussian_noise": (0.02, 0.04, 0.06, 0.08, 0.10),  # noise std
    "impulse_noise": (0.01, 0.02, 0.04, 0.07, 0.10),  # fraction of entries hit
    "contrast": (0.75, 0.60, 0.45, 0.30, 0.15),  # deviation-from-mean factor
    "brightness": (0.10, 0.20, 0.30, 0.40, 0.50),  # additive shift
    "pixelate": (2, 3, 4, 6, 8),  # block side in pixels
}
CORRUPTION_KINDS = tuple(SEVERITY_TABLES)
SEVERITIES = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in SEVERITY_TABLES:
            raise ConfigError(f"unknown corruption {self.kind!r}; choose from {CORRUPTION_KINDS}")
        if self.severity not in SEVERITIES:
            raise ConfigError(f"severity must be 1..5, got {self.severity}")

    @property
    def param(self) -> float:
        return SEVERITY_TABLES[self.kind][self.severity - 1]


def _block_mean(x: np.ndarray, block: int) -> np.ndarray:
    """Replace each ``block x block`` tile (ragged at the far edges) by its mean."""
    h, w = x.shape[-2:]
    rows = np.arange(0, h, block)
    cols = np.arange(0, w, block)
    sums = np.add.reduceat(np.add.reduceat(x, rows, axis=-2), cols, axis=-1)
    counts = np.outer(np.diff(np.append(rows, h)), np.diff(np.append(cols, w)))
    means = sums / counts
    return np.repeat(np.repeat(means, np.diff(np.append(rows, h)), axis=-2), np.diff(np.append(cols, w)), axis=-1)


def corrupt(x: np.ndarray, spec: CorruptionSpec, rng: np.random.Generator | None = None, clip: bool = True) -> np.ndarray:
    """Apply ``spec`` to images ``[..., 3, H, W]`` in [0, 1]."""
    x = np.asarray(x)
    dtype = x.dtype
    rng = rng if rng is not None else np.random.default_rng(0)
    v = spec.param
    if spec.kind == "gaussian_noise":
        out = x + rng.normal(0.0, v, size=x.shape)
    elif spec.kind == "impulse_noise":
        hit = rng.random(x.shape) < v
        salt = rng.random(x.shape) < 0.5
        out = np.where(hit, salt.astype(np.float64), x)
    elif spec.kind == "contrast":
        mu = x.mean(axis=(-2, -1), keepdims=True)
        out = (x - mu) * v + mu
    elif spec.kind == "brightness":
        out = x + v
    else:
        out = _block_mean(x.astype(np.float64), int(v))
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return out.astype(dtype)
