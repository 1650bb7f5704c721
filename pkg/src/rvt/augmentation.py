"""Image-level and patch-wise data augmentation on ``[3, H, W]`` arrays in [0, 1].

Patch-wise augmentation partitions the image into non-overlapping
``patch x patch`` cells and, independently per cell and per transform, applies
random resized crop, horizontal flip and gaussian noise (in that order), each
with probability ``p``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any

import numpy as np

from rvt.errors import ConfigError

TRANSFORMS = ("crop", "flip", "noise")


@dataclass(frozen=True)
class AugConfig:
    p: float = 0.1
    crop_scale: tuple[float, float] = (0.85, 1.0)
    noise_mean: float = 0.0
    noise_std: float = 0.01
    patch: int = 16
    transforms: tuple[str, ...] = TRANSFORMS
    image_level: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "crop_scale", tuple(float(v) for v in self.crop_scale))
        object.__setattr__(self, "transforms", tuple(self.transforms))
        lo, hi = self.crop_scale
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"aug.p must lie in [0, 1], got {self.p}")
        if not 0.0 < lo <= hi <= 1.0:
            raise ConfigError(f"aug.crop_scale must satisfy 0 < lo <= hi <= 1, got {self.crop_scale}")
        if self.noise_std < 0:
            raise ConfigError("aug.noise_std must be non-negative")
        if self.patch < 2:
            raise ConfigError("aug.patch must be at least 2 pixels")
        unknown = set(self.transforms) - set(TRANSFORMS)
        if unknown:
            raise ConfigError(f"unknown patch transforms {sorted(unknown)}")

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["crop_scale"] = list(self.crop_scale)
        d["transforms"] = list(self.transforms)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> AugConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"aug: unknown keys {unknown}")
        return cls(**data)


def _bilinear(patch: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``patch[C, s, s]`` on the grid ``ys x xs`` (edge-clamped)."""
    s_h, s_w = patch.shape[-2:]
    ys = np.clip(ys, 0.0, s_h - 1.0)
    xs = np.clip(xs, 0.0, s_w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, s_h - 1)
    x1 = np.minimum(x0 + 1, s_w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = patch[:, y0[:, None], x0[None, :]]
    b = patch[:, y0[:, None], x1[None, :]]
    c = patch[:, y1[:, None], x0[None, :]]
    d = patch[:, y1[:, None], x1[None, :]]
    # lerp form keeps constant regions exactly constant
    top = a + fx * (b - a)
    bottom = c + fx * (d - c)
    return (top + fy * (bottom - top)).astype(patch.dtype)


def patch_crop(patch: np.ndarray, scale: float, rng: np.random.Generator | None = None, anchor: tuple[float, float] | None = None) -> np.ndarray:
    """Crop a square window covering ``scale`` of the area and resize it back.

    The window side is ``s * sqrt(scale)`` (aspect ratio kept).  Its top-left
    corner is ``anchor`` or uniform over the valid range; output pixel ``i``
    samples source coordinate ``top + (i + 0.5) * side / s - 0.5``.
    """
    s = patch.shape[-1]
    side = s * float(np.sqrt(scale))
    if anchor is None:
        rng = rng if rng is not None else np.random.default_rng()
        top, left = rng.uniform(0.0, s - side, size=2) if side < s else (0.0, 0.0)
    else:
        top, left = anchor
    centers = (np.arange(s) + 0.5) * (side / s) - 0.5
    return _bilinear(patch, top + centers, left + centers)


def patch_noise(patch: np.ndarray, mean: float, std: float, rng: np.random.Generator) -> np.ndarray:
    noise = rng.normal(mean, std, size=patch.shape)
    return np.clip(patch + noise.astype(patch.dtype), 0.0, 1.0)


def patch_hflip(patch: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(patch[..., ::-1])


def patchwise_augment(img: np.ndarray, cfg: AugConfig, rng: np.random.Generator | None = None, return_mask: bool = False):
    """Augment each grid cell of ``img[3, H, W]`` independently.

    Each cell draws one uniform per transform (crop, flip, noise) whether or
    not the transform is enabled, so enabling a transform never shifts the
    random stream of the others.  With ``return_mask`` the per-cell
    ``[n_cells, 3]`` boolean application record is returned as well.
    """
    _, h, w = img.shape
    s = cfg.patch
    if h % s or w % s:
        raise ConfigError(f"image {h}x{w} not divisible into {s}x{s} cells")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    enabled = np.array([t in cfg.transforms for t in TRANSFORMS])
    out = img.copy()
    cells = (h // s) * (w // s)
    mask = np.zeros((cells, len(TRANSFORMS)), dtype=bool)
    lo, hi = cfg.crop_scale
    for k in range(cells):
        r, c = divmod(k, w // s)
        applied = (rng.random(len(TRANSFORMS)) < cfg.p) & enabled
        mask[k] = applied
        if not applied.any():
            continue
        ys, xs = slice(r * s, (r + 1) * s), slice(c * s, (c + 1) * s)
        cell = out[:, ys, xs]
        if applied[0]:
            cell = patch_crop(cell, rng.uniform(lo, hi), rng)
        if applied[1]:
            cell = patch_hflip(cell)
        if applied[2]:
            cell = patch_noise(cell, cfg.noise_mean, cfg.noise_std, rng)
        out[:, ys, xs] = cell
    return (out, mask) if return_mask else out


def image_level_augment(img: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random horizontal flip, then a random crop from a zero-padded copy."""
    if rng.random() < 0.5:
        img = img[..., ::-1]
    _, h, w = img.shape
    padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad)))
    dy, dx = rng.integers(0, 2 * pad + 1, size=2)
    return np.ascontiguousarray(padded[:, dy : dy + h, dx : dx + w])


def training_transform(img: np.ndarray, cfg: AugConfig, rng: np.random.Generator) -> np.ndarray:
    """Image-level augmentation (if enabled) followed by patch-wise augmentation."""
    if cfg.image_level:
        img = image_level_augment(img, rng)
    return patchwise_augment(img, cfg, rng)


def image_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, epoch, image index); order-independent."""
    return np.random.default_rng([seed, epoch, index])


def augment_batch(images: np.ndarray, indices, cfg: AugConfig, seed: int, epoch: int = 0) -> np.ndarray:
    return np.stack([training_transform(img, cfg, image_rng(seed, epoch, int(i))) for img, i in zip(images, indices)])
