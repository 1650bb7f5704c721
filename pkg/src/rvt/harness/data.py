"""Dataset container, the RVTD binary format and a synthetic 4-class generator.

RVTD layout (little-endian)::

    b"RVTD" | u32 version | u32 B | u32 H | u32 W | u32 K | u16 labels[B] | u8 pixels[B*H*W*3]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rvt.errors import DataError, FormatError

MAGIC = b"RVTD"
VERSION = 1
_HEADER = struct.Struct("<5I")


@dataclass
class Dataset:
    images: np.ndarray  # u8 [B, H, W, 3]
    labels: np.ndarray  # u16 [B]
    num_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels)
        if self.images.dtype != np.uint8 or self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise DataError(f"images must be uint8 [B, H, W, 3], got {self.images.dtype} {self.images.shape}")
        if self.labels.dtype != np.uint16 or self.labels.shape != (len(self.images),):
            raise DataError(f"labels must be uint16 [{len(self.images)}], got {self.labels.dtype} {self.labels.shape}")
        if len(self.images) == 0:
            raise DataError("dataset is empty")
        if self.num_classes < 1 or int(self.labels.max()) >= self.num_classes:
            raise DataError(f"labels must be < num_classes={self.num_classes}")

    def __len__(self) -> int:
        return len(self.labels)

    def as_float(self, dtype=np.float32) -> np.ndarray:
        """Images as ``[B, 3, H, W]`` floats in [0, 1]."""
        kind = np.dtype(dtype).type
        return (self.images.transpose(0, 3, 1, 2).astype(kind) / kind(255.0)).astype(kind)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Dataset)
            and self.num_classes == other.num_classes
            and np.array_equal(self.images, other.images)
            and np.array_equal(self.labels, other.labels)
        )


def dataset_bytes(ds: Dataset) -> bytes:
    b, h, w, _ = ds.images.shape
    return b"".join(
        [
            MAGIC,
            _HEADER.pack(VERSION, b, h, w, ds.num_classes),
            ds.labels.astype("<u2").tobytes(),
            np.ascontiguousarray(ds.images).tobytes(),
        ]
    )


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(dataset_bytes(ds))


def parse_dataset(buf: bytes) -> Dataset:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError("not an RVTD dataset (bad magic)", 0)
    if len(buf) < 4 + _HEADER.size:
        raise FormatError("truncated dataset header", len(buf))
    version, b, h, w, k = _HEADER.unpack_from(buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}", 4)
    pos = 4 + _HEADER.size
    label_end = pos + 2 * b
    pixel_end = label_end + b * h * w * 3
    if len(buf) < label_end:
        raise FormatError(f"truncated labels: need {label_end} bytes, have {len(buf)}", len(buf))
    if len(buf) < pixel_end:
        raise FormatError(f"truncated pixels: need {pixel_end} bytes, have {len(buf)}", len(buf))
    if len(buf) > pixel_end:
        raise FormatError(f"{len(buf) - pixel_end} trailing bytes after pixel data", pixel_end)
    labels = np.frombuffer(buf, dtype="<u2", count=b, offset=pos).astype(np.uint16)
    images = np.frombuffer(buf, dtype=np.uint8, count=b * h * w * 3, offset=label_end).reshape(b, h, w, 3).copy()
    return Dataset(images, labels, k)


def load_dataset(path) -> Dataset:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    return parse_dataset(buf)


# one (colour, bar orientation) pair per class
CLASS_COLOURS = np.array(
    [
        [0.80, 0.45, 0.45],
        [0.45, 0.80, 0.45],
        [0.45, 0.45, 0.80],
        [0.75, 0.75, 0.40],
    ]
)
ORIENTATIONS = ("horizontal", "vertical", "diagonal", "antidiagonal")


def _bar_mask(orientation: str, size: int, offset: float, width: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    if orientation == "horizontal":
        dist = np.abs(yy - c - offset)
    elif orientation == "vertical":
        dist = np.abs(xx - c - offset)
    elif orientation == "diagonal":
        dist = np.abs((yy - xx) / np.sqrt(2.0) - offset)
    else:
        dist = np.abs((yy + xx - 2 * c) / np.sqrt(2.0) - offset)
    return dist <= width / 2.0


def make_synthetic_dataset(seed: int, n_per_class: int, size: int = 32) -> Dataset:
    """Coloured oriented bars on a noisy gray background, 4 classes, class-sorted.

    Each class pairs one bar orientation with one hue.  Bar position, width,
    colour and background level are jittered per image.
    """
    if n_per_class < 1:
        raise DataError("n_per_class must be at least 1")
    rng = np.random.default_rng(seed)
    k = len(ORIENTATIONS)
    images = np.empty((k * n_per_class, size, size, 3), dtype=np.uint8)
    labels = np.repeat(np.arange(k, dtype=np.uint16), n_per_class)
    for i, cls in enumerate(labels):
        bg = rng.uniform(0.3, 0.5) + rng.normal(0.0, 0.04, size=(size, size, 1))
        img = np.repeat(bg, 3, axis=2)
        mask = _bar_mask(ORIENTATIONS[cls], size, rng.uniform(-6.0, 6.0), rng.uniform(5.0, 9.0))
        colour = np.clip(CLASS_COLOURS[cls] + rng.normal(0.0, 0.04, size=3), 0.0, 1.0)
        img[mask] = colour + rng.normal(0.0, 0.03, size=(int(mask.sum()), 3))
        images[i] = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    return Dataset(images, labels, k)
