"""Binary feature cache.

Layout (all little-endian)::

    magic   4s   b"LFCV"
    version u32
    kind    u8   0 raw, 1 hog, 2 lbp
    dim     u32
    count   u64
    fingerprint 32 bytes (SHA-256 of descriptor params, image size, dataset split)
    count x record { class_id u32, split u8 (0 train, 1 val, 2 test, 255 none), dim x f32 }
"""
from __future__ import annotations

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import CacheFormatError, ImageTooSmall
from ..features import KINDS, extract, make_params, params_fingerprint
from ..imaging import resize_bilinear, to_grayscale
from .dataset import DatasetManifest

log = logging.getLogger(__name__)

MAGIC = b"LFCV"
VERSION = 1
HEADER = struct.Struct("<4sIBIQ32s")
SPLIT_CODES = {"train": 0, "val": 1, "test": 2, None: 255}
SPLIT_NAMES = {v: k for k, v in SPLIT_CODES.items()}


@dataclass(eq=False)
class FeatureCache:
    kind: str
    fingerprint: bytes
    class_ids: np.ndarray  # (count,) uint32
    splits: np.ndarray     # (count,) uint8
    values: np.ndarray     # (count, dim) float32

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def count(self) -> int:
        return self.values.shape[0]

    def select(self, split: str | None):
        """``(features, labels)`` for one split, or everything when ``split`` is None."""
        if split is None:
            mask = np.ones(self.count, dtype=bool)
        else:
            mask = self.splits == SPLIT_CODES[split]
        return self.values[mask], self.class_ids[mask].astype(np.int64)


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("class_id", "<u4"), ("split", "u1"), ("values", "<f4", (dim,))])


def write_cache(path, cache: FeatureCache) -> None:
    header = HEADER.pack(MAGIC, VERSION, KINDS.index(cache.kind), cache.dim, cache.count, cache.fingerprint)
    rec = np.zeros(cache.count, dtype=_record_dtype(cache.dim))
    rec["class_id"] = cache.class_ids
    rec["split"] = cache.splits
    rec["values"] = cache.values
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())


def read_header(path):
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise CacheFormatError(f"{path}: truncated header")
    magic, version, kind, dim, count, fp = HEADER.unpack(raw)
    if magic != MAGIC:
        raise CacheFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CacheFormatError(f"{path}: unsupported version {version}")
    if kind >= len(KINDS):
        raise CacheFormatError(f"{path}: unknown kind code {kind}")
    return KINDS[kind], dim, count, fp


def read_cache(path) -> FeatureCache:
    kind, dim, count, fp = read_header(path)
    dt = _record_dtype(dim)
    with open(path, "rb") as fh:
        fh.seek(HEADER.size)
        body = fh.read()
    if len(body) != count * dt.itemsize:
        raise CacheFormatError(f"{path}: expected {count} records of {dt.itemsize} bytes, found {len(body)} bytes")
    rec = np.frombuffer(body, dtype=dt)
    return FeatureCache(kind, fp, rec["class_id"].copy(), rec["split"].copy(),
                        np.ascontiguousarray(rec["values"]))


def cache_fingerprint(manifest: DatasetManifest, kind: str, params, image_size: int) -> bytes:
    return params_fingerprint(kind, params, image_size=image_size, dataset=manifest.split_fingerprint())


def featurize(img, kind: str, params, image_size: int) -> np.ndarray:
    img = resize_bilinear(to_grayscale(img), image_size, image_size)
    return extract(img, kind, params).values.astype(np.float32)


def extract_features(manifest: DatasetManifest, kind: str, params=None, image_size: int = 224,
                     cache_path=None, workers: int = 1) -> FeatureCache:
    """Descriptor matrix for every sample of ``manifest``.

    A cache file at ``cache_path`` is reused when its fingerprint matches and
    rewritten otherwise. Results are gathered in manifest order whatever the
    worker count.
    """
    if params is None or isinstance(params, dict):
        params = make_params(kind, params)
    fp = cache_fingerprint(manifest, kind, params, image_size)
    if cache_path is not None and Path(cache_path).is_file():
        try:
            if read_header(cache_path)[3] == fp:
                log.info("reusing feature cache %s", cache_path)
                return read_cache(cache_path)
            log.info("feature cache %s is stale; regenerating", cache_path)
        except CacheFormatError as exc:
            log.warning("ignoring unreadable cache: %s", exc)

    def one(sample):
        try:
            return featurize(manifest.load_image(sample), kind, params, image_size)
        except ImageTooSmall as exc:
            raise ImageTooSmall(f"{sample.path}: {exc}") from exc

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, manifest.samples))
    else:
        rows = [one(s) for s in manifest.samples]
    cache = FeatureCache(
        kind, fp,
        np.array([s.class_id for s in manifest.samples], dtype=np.uint32),
        np.array([SPLIT_CODES[s.split] for s in manifest.samples], dtype=np.uint8),
        np.stack(rows) if rows else np.zeros((0, 0), dtype=np.float32),
    )
    if cache_path is not None:
        write_cache(cache_path, cache)
    return cache
