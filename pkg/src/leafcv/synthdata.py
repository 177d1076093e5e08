"""Deterministic synthetic rice-leaf images for desk-scale experiments.

Every class shares a green, noisy, unevenly lit leaf background. Lesions are
class-specific and their bounding boxes are recorded:

* brown_spot: 3-7 dark elliptical blobs with bright yellow halos
* healthy: no lesions
* leaf_blast: 1-3 thin streaks running at about 45 degrees
* neck_blast: one dark horizontal band in the upper third

Each image draws from its own stream keyed on ``(seed, class_id, index)`` so
images can be produced in any order or in parallel with identical bytes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, IoFailure
from .imaging import ImageBuffer, encode_image, resize_array
from .rng import make_rng

CLASSES = ("brown_spot", "healthy", "leaf_blast", "neck_blast")
# Reported per-class counts of the real rice dataset, used by --imbalanced.
REAL_COUNTS = (613, 1488, 977, 1000)


@dataclass(frozen=True)
class SynthConfig:
    per_class: int = 50
    image_size: int = 64
    seed: int = 0
    lesion_boxes: bool = True
    imbalanced: bool = False

    def __post_init__(self):
        if self.per_class < 1:
            raise ConfigError("per_class must be >= 1")
        if self.image_size < 32:
            raise ConfigError("image_size must be >= 32")

    def class_counts(self) -> list[int]:
        if not self.imbalanced:
            return [self.per_class] * len(CLASSES)
        mean = sum(REAL_COUNTS) / len(REAL_COUNTS)
        return [max(1, round(self.per_class * n / mean)) for n in REAL_COUNTS]


def _coverage(dist: np.ndarray, radius, soft: float = 0.75) -> np.ndarray:
    """Anti-aliased 0..1 mask for points within ``radius`` of a shape."""
    return np.clip((radius - dist) / soft + 0.5, 0.0, 1.0)


def _paint(img: np.ndarray, alpha: np.ndarray, color) -> None:
    img += alpha[:, :, None] * (np.asarray(color) - img)


def _box(x0, y0, x1, y1, size) -> dict:
    x0, y0 = max(0, int(math.floor(x0))), max(0, int(math.floor(y0)))
    x1, y1 = min(size, int(math.ceil(x1))), min(size, int(math.ceil(y1)))
    return {"x": x0, "y": y0, "w": max(0, x1 - x0), "h": max(0, y1 - y0)}


def _background(rng, size: int) -> np.ndarray:
    base = np.array([0.22, 0.52, 0.16]) * rng.uniform(0.85, 1.15, size=3)
    coarse = rng.normal(0.0, 1.0, size=(4, 4, 1))
    shade = resize_array(coarse, size, size)[:, :, 0] * 0.05
    img = base[None, None, :] + shade[:, :, None]
    img += rng.normal(0.0, 0.03, size=(size, size, 3))
    return img


def _brown_spots(img, rng, xs, ys, f, size):
    boxes = []
    for _ in range(int(rng.integers(3, 8))):
        a, b = rng.uniform(2.0, 4.5, size=2) * f
        theta = rng.uniform(0, math.pi)
        halo = 1.7
        margin = halo * max(a, b) + 1
        cx, cy = rng.uniform(margin, size - margin, size=2)
        c, s = math.cos(theta), math.sin(theta)
        u = (xs - cx) * c + (ys - cy) * s
        v = -(xs - cx) * s + (ys - cy) * c
        r = np.sqrt((u / a) ** 2 + (v / b) ** 2)  # 1 on the ellipse boundary
        scale = min(a, b)
        _paint(img, _coverage(r * scale, halo * scale), (0.80, 0.76, 0.30))
        _paint(img, _coverage(r * scale, scale), (0.32, 0.18, 0.07))
        ext = halo * max(a, b)
        boxes.append(_box(cx - ext, cy - ext, cx + ext, cy + ext, size))
    return boxes


def _leaf_blast(img, rng, xs, ys, f, size):
    boxes = []
    for _ in range(int(rng.integers(1, 4))):
        angle = math.radians(45 + rng.uniform(-8, 8))
        length = rng.uniform(18, 32) * f
        half_w = rng.uniform(1.3, 2.2) * f
        dx, dy = math.cos(angle), -math.sin(angle)  # up-right in display coordinates
        hx, hy = abs(dx) * length / 2 + half_w + 1, abs(dy) * length / 2 + half_w + 1
        cx = rng.uniform(hx, size - hx)
        cy = rng.uniform(hy, size - hy)
        px, py = xs - cx, ys - cy
        t = np.clip(px * dx + py * dy, -length / 2, length / 2)
        dist = np.hypot(px - t * dx, py - t * dy)
        _paint(img, _coverage(dist, half_w), (0.45, 0.28, 0.10))
        _paint(img, _coverage(dist, 0.5 * half_w), (0.78, 0.76, 0.66))
        boxes.append(_box(cx - hx, cy - hy, cx + hx, cy + hy, size))
    return boxes


def _neck_blast(img, rng, xs, ys, f, size):
    yc = rng.uniform(0.12, 0.26) * size
    half_t = rng.uniform(2.5, 4.0) * f
    amp = rng.uniform(0.0, 1.5) * f
    phase = rng.uniform(0, 2 * math.pi)
    centre = yc + amp * np.sin(2 * math.pi * xs / size + phase)
    _paint(img, _coverage(np.abs(ys - centre), half_t), (0.14, 0.09, 0.05))
    ext = half_t + amp + 1
    return [_box(0, yc - ext, size, yc + ext, size)]


_LESIONS = {"brown_spot": _brown_spots, "leaf_blast": _leaf_blast, "neck_blast": _neck_blast}


def generate_image(class_id: int, index: int, cfg: SynthConfig):
    """Render one image. Returns ``(ImageBuffer, lesion_boxes)``."""
    size = cfg.image_size
    f = size / 64.0
    rng = make_rng(cfg.seed, class_id, index)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    img = _background(rng, size)
    painter = _LESIONS.get(CLASSES[class_id])
    boxes = painter(img, rng, xs, ys, f, size) if painter else []
    img *= rng.uniform(0.7, 1.3)  # global illumination
    return ImageBuffer(np.clip(img, 0.0, 1.0)), boxes


def generate(cfg: SynthConfig, out_dir) -> list[dict]:
    """Write ``out_dir/<class>/<index>.ppm`` and ``manifest.json``; returns the manifest entries."""
    out = Path(out_dir)
    entries = []
    try:
        for class_id, (name, count) in enumerate(zip(CLASSES, cfg.class_counts())):
            (out / name).mkdir(parents=True, exist_ok=True)
            for index in range(count):
                img, boxes = generate_image(class_id, index, cfg)
                rel = f"{name}/{index:05d}.ppm"
                (out / rel).write_bytes(encode_image(img, "PPM"))
                entries.append({"path": rel, "class_id": class_id, "class_name": name,
                                "lesion_boxes": boxes if cfg.lesion_boxes else []})
        (out / "manifest.json").write_text(json.dumps(entries, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write synthetic dataset to {out}: {exc}") from exc
    return entries


def hog_diagonal_energy(img: ImageBuffer, orientations: int = 9, cell_size: int = 8) -> float:
    """Share of HOG cell-histogram mass in the bins nearest 45 and 135 degrees."""
    from .features import HogParams, cell_histograms
    from .imaging import to_grayscale

    hist = cell_histograms(to_grayscale(img), HogParams(orientations, cell_size)).sum(axis=(0, 1))
    centres = (np.arange(orientations) + 0.5) * 180.0 / orientations
    bins = {int(np.argmin(np.abs(centres - a))) for a in (45.0, 135.0)}
    total = hist.sum()
    return float(hist[sorted(bins)].sum() / total) if total > 0 else 0.0
