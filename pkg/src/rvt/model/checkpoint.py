"""Binary weight checkpoints.

Layout (little-endian)::

    b"RVTW" | u32 version | u32 len | config JSON (utf-8)
    then per parameter, until EOF:
    u32 name_len | name (utf-8) | u8 dtype tag | u32 rank | u32 extents[rank] | raw data
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from rvt.errors import FormatError
from rvt.model.config import ModelConfig
from rvt.model.network import Model
from rvt.numerics import Tensor

MAGIC = b"RVTW"
VERSION = 1
_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


def checkpoint_bytes(model: Model) -> bytes:
    blob = json.dumps(model.cfg.to_dict(), sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
    for name, p in model.named_parameters():
        arr = np.ascontiguousarray(p.data, dtype=p.data.dtype.newbyteorder("<"))
        encoded = name.encode()
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BI", _DTYPE_TAGS[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(model: Model, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint while reading {what}", self.pos)
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    @property
    def done(self) -> bool:
        return self.pos >= len(self.buf)


def parse_checkpoint(buf: bytes) -> Model:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("not an RVTW checkpoint (bad magic)", 0)
    version, blob_len = r.unpack("<II", "header")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    at = r.pos
    try:
        cfg = ModelConfig.from_dict(json.loads(r.take(blob_len, "config").decode()))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"config blob is not valid JSON: {exc}", at) from exc
    params: OrderedDict[str, Tensor] = OrderedDict()
    while not r.done:
        at = r.pos
        (name_len,) = r.unpack("<I", "name length")
        name = r.take(name_len, "name").decode()
        tag, rank = r.unpack("<BI", f"{name} header")
        if tag not in _TAG_DTYPES:
            raise FormatError(f"unknown dtype tag {tag} for {name}", at)
        shape = r.unpack(f"<{rank}I", f"{name} extents")
        dtype = _TAG_DTYPES[tag]
        count = int(np.prod(shape)) if rank else 1
        raw = r.take(count * dtype.itemsize, f"{name} data")
        data = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
        params[name] = Tensor(data, requires_grad=True)
    try:
        return Model(cfg, params)
    except Exception as exc:
        raise FormatError(f"checkpoint parameters do not match its config: {exc}", r.pos) from exc


def load_checkpoint(path) -> Model:
    return parse_checkpoint(Path(path).read_bytes())
