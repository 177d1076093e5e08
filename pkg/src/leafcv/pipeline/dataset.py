"""Directory-per-class dataset ingestion and stratified splitting."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import ClassTooSmall, ConfigError, DataError, EmptyClassDir, UndecodableImage
from ..imaging import ImageBuffer, read_image
from ..rng import make_rng

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".ppm", ".pgm", ".png", ".jpg", ".jpeg"}
SPLITS = ("train", "val", "test")
MANIFEST_VERSION = 1


@dataclass
class Sample:
    path: str  # relative to the dataset root, '/'-separated
    class_id: int
    split: str | None = None
    lesion_boxes: list | None = None


@dataclass
class DatasetManifest:
    root: str
    classes: list[str]
    samples: list[Sample]
    source_fingerprint: str
    split_fractions: list[float] | None = None
    split_seed: int | None = None
    skipped: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["version"] = MANIFEST_VERSION
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        samples = [Sample(**s) for s in d["samples"]]
        return cls(d["root"], list(d["classes"]), samples, d["source_fingerprint"],
                   d.get("split_fractions"), d.get("split_seed"), list(d.get("skipped", [])))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def abspath(self, sample: Sample) -> Path:
        return Path(self.root) / sample.path

    def load_image(self, sample: Sample) -> ImageBuffer:
        return read_image(self.abspath(sample))

    def select(self, split: str | None) -> list[Sample]:
        if split is None:
            return list(self.samples)
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}")
        if any(s.split is None for s in self.samples):
            raise ConfigError("manifest has not been split")
        return [s for s in self.samples if s.split == split]

    def labels(self, split: str | None = None) -> np.ndarray:
        return np.array([s.class_id for s in self.select(split)], dtype=np.int64)

    def split_fingerprint(self) -> str:
        h = hashlib.sha256(self.source_fingerprint.encode())
        for s in self.samples:
            h.update(f"{s.path}|{s.class_id}|{s.split}\n".encode())
        return h.hexdigest()


def _lesion_index(root: Path) -> dict[str, list]:
    meta = root / "manifest.json"
    if not meta.is_file():
        return {}
    try:
        entries = json.loads(meta.read_text())
    except (OSError, ValueError):
        return {}
    if not isinstance(entries, list):
        return {}
    return {e["path"]: e.get("lesion_boxes", []) for e in entries if isinstance(e, dict) and "path" in e}


def ingest(data_dir, skip_bad: bool = False, verify: bool = True) -> DatasetManifest:
    """Scan ``data_dir/<class>/<image>`` into a manifest with lexicographic class ids.

    Each file is decoded once when ``verify`` is set. Undecodable files abort
    the ingest unless ``skip_bad``; they are then listed in ``skipped``.
    Lesion boxes are attached when a synthetic ``manifest.json`` sits at the root.
    """
    root = Path(data_dir).resolve()
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not classes:
        raise EmptyClassDir(f"{root} contains no class directories")
    boxes = _lesion_index(root)
    digest = hashlib.sha256()
    samples, bad = [], []
    for class_id, name in enumerate(classes):
        files = sorted(p for p in (root / name).iterdir()
                       if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        kept = 0
        for f in files:
            rel = f"{name}/{f.name}"
            data = f.read_bytes()
            if verify:
                try:
                    read_image(f)
                except DataError as exc:
                    bad.append(rel)
                    log.warning("undecodable image %s: %s", rel, exc)
                    continue
            digest.update(rel.encode() + b"\0" + hashlib.sha256(data).digest())
            samples.append(Sample(rel, class_id, None, boxes.get(rel)))
            kept += 1
        if kept == 0:
            raise EmptyClassDir(f"class directory {name!r} holds no decodable images")
        log.info("class %s: %d images", name, kept)
    if bad and not skip_bad:
        raise UndecodableImage(f"{len(bad)} undecodable images: {', '.join(bad[:10])}")
    return DatasetManifest(str(root), classes, samples, digest.hexdigest(), skipped=bad)


def largest_remainder(n: int, fractions) -> list[int]:
    """Apportion ``n`` items by ``fractions``; leftovers go to the largest
    fractional parts, earlier splits winning ties."""
    quotas = [n * f for f in fractions]
    counts = [int(np.floor(q + 1e-9)) for q in quotas]
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split(manifest: DatasetManifest, fractions=(0.7, 0.15, 0.15), seed: int = 0) -> DatasetManifest:
    """Stratified train/val/test assignment with a seeded shuffle per class."""
    fractions = [float(f) for f in fractions]
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    assigned = {}
    for class_id, name in enumerate(manifest.classes):
        idx = [i for i, s in enumerate(manifest.samples) if s.class_id == class_id]
        counts = largest_remainder(len(idx), fractions)
        if counts[0] < 1 or counts[2] < 1:
            raise ClassTooSmall(
                f"class {name!r} with {len(idx)} samples gets {counts[0]} train / {counts[2]} test")
        order = make_rng(seed, class_id).permutation(len(idx))
        labels = ["train"] * counts[0] + ["val"] * counts[1] + ["test"] * counts[2]
        for pos, lab in zip(order, labels):
            assigned[idx[pos]] = lab
    samples = [replace(s, split=assigned[i]) for i, s in enumerate(manifest.samples)]
    return replace(manifest, samples=samples, split_fractions=fractions, split_seed=seed)
