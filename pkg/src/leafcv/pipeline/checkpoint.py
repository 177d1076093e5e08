"""Model checkpoint file.

Layout (little-endian)::

    magic     4s  b"LFCK"
    version   u32
    meta_len  u64, then meta_len bytes of UTF-8 JSON (spec, classes, configs, history)
    n_tensors u32
    per tensor: name_len u32, name, dtype u8 (0 f32, 1 f64), ndim u8, ndim x u64 dims,
                nbytes u64, raw little-endian data
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CacheFormatError
from ..nn.model import Model, ModelSpec

MAGIC = b"LFCK"
VERSION = 1
DTYPES = (np.dtype("<f4"), np.dtype("<f8"))


@dataclass(eq=False)
class ModelCheckpoint:
    spec: ModelSpec
    state: dict[str, np.ndarray]
    class_names: list[str]
    train_config: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)  # representation, descriptor params, image size, ...

    @classmethod
    def from_model(cls, model: Model, class_names, train_config=None, history=None, meta=None):
        state = {k: v.copy() for k, v in model.state().items()}
        return cls(model.spec, state, list(class_names), dict(train_config or {}), list(history or []),
                   dict(meta or {}))

    def to_model(self) -> Model:
        dtype = next(iter(self.state.values())).dtype if self.state else np.float32
        model = Model(self.spec, dtype=dtype)
        model.load_state(self.state)
        return model

    @property
    def representation(self) -> str:
        return self.meta.get("representation", "raw")


def _pack_str(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


def save_checkpoint(path, ckpt: ModelCheckpoint) -> None:
    meta = {"spec": ckpt.spec.to_dict(), "class_names": ckpt.class_names, "train_config": ckpt.train_config,
            "history": ckpt.history, "meta": ckpt.meta}
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(ckpt.state))]
    for name in sorted(ckpt.state):
        arr = np.asarray(ckpt.state[name])
        code = DTYPES.index(arr.dtype.newbyteorder("<"))
        data = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
        parts.append(_pack_str(name.encode()))
        parts.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(struct.pack("<Q", len(data)) + data)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CacheFormatError(f"{self.path}: checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def load_checkpoint(path) -> ModelCheckpoint:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise CacheFormatError(f"{path}: not a checkpoint (bad magic)")
    version, meta_len = r.unpack("<IQ")
    if version != VERSION:
        raise CacheFormatError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(r.take(meta_len).decode())
    (n,) = r.unpack("<I")
    state = {}
    for _ in range(n):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode()
        code, ndim = r.unpack("<BB")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        (nbytes,) = r.unpack("<Q")
        state[name] = np.frombuffer(r.take(nbytes), dtype=DTYPES[code]).reshape(shape).copy()
    return ModelCheckpoint(ModelSpec.from_dict(meta["spec"]), state, meta["class_names"],
                           meta["train_config"], meta["history"], meta["meta"])
