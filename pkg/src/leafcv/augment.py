"""Stochastic training-time augmentation.

Five transforms applied in a fixed order: horizontal flip, rotation, zoom,
vertical shift, horizontal shift. Resampling is bilinear with reflect
padding. ``rotation_factor`` is a fraction of a full turn, so the default 0.2
draws angles in [-72, +72] degrees.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, NonPositiveScale
from .imaging import ImageBuffer, from_float64, sample_bilinear
from .rng import make_rng


@dataclass(frozen=True)
class AugmentConfig:
    horizontal_flip: bool = True
    rotation_factor: float = 0.2
    zoom_factor: float = 0.2
    height_factor: float = 0.2
    width_factor: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for name in ("rotation_factor", "zoom_factor", "height_factor", "width_factor"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {v}")

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentConfig":
        return cls(False, 0.0, 0.0, 0.0, 0.0, seed)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AugmentParams:
    flip: bool
    angle: float
    scale: float
    dy: float
    dx: float


def sample_params(cfg: AugmentConfig, rng, height: int, width: int) -> AugmentParams:
    """Draw one parameter set. Always consumes exactly five uniforms from ``rng``."""
    u = [float(rng.random()) for _ in range(5)]
    flip = cfg.horizontal_flip and u[0] < 0.5
    angle = (2.0 * u[1] - 1.0) * cfg.rotation_factor * 2.0 * math.pi
    scale = 1.0 + (2.0 * u[2] - 1.0) * cfg.zoom_factor
    dy = (2.0 * u[3] - 1.0) * cfg.height_factor * height
    dx = (2.0 * u[4] - 1.0) * cfg.width_factor * width
    return AugmentParams(flip, angle, scale, dy, dx)


def _grid(img: ImageBuffer):
    ys, xs = np.mgrid[0:img.height, 0:img.width].astype(np.float64)
    cx = (img.width - 1) / 2.0
    cy = (img.height - 1) / 2.0
    return xs - cx, ys - cy, cx, cy


def flip_horizontal(img: ImageBuffer) -> ImageBuffer:
    return ImageBuffer(img.pixels[:, ::-1, :])


def rotate(img: ImageBuffer, angle: float) -> ImageBuffer:
    """Rotate counter-clockwise (as displayed) by ``angle`` radians about the center."""
    if angle == 0:
        return img
    u, v, cx, cy = _grid(img)
    c, s = math.cos(angle), math.sin(angle)
    src_x = u * c - v * s + cx
    src_y = u * s + v * c + cy
    return from_float64(sample_bilinear(img.pixels, src_x, src_y, "reflect"))


def zoom(img: ImageBuffer, scale: float) -> ImageBuffer:
    """Magnify by ``scale`` about the center (scale < 1 zooms out)."""
    if scale <= 0:
        raise NonPositiveScale(f"zoom scale must be > 0, got {scale}")
    if scale == 1:
        return img
    u, v, cx, cy = _grid(img)
    return from_float64(sample_bilinear(img.pixels, u / scale + cx, v / scale + cy, "reflect"))


def translate(img: ImageBuffer, dx: float, dy: float) -> ImageBuffer:
    """Shift content right by ``dx`` and down by ``dy`` pixels."""
    if dx == 0 and dy == 0:
        return img
    ys, xs = np.mgrid[0:img.height, 0:img.width].astype(np.float64)
    return from_float64(sample_bilinear(img.pixels, xs - dx, ys - dy, "reflect"))


def apply_params(img: ImageBuffer, p: AugmentParams) -> ImageBuffer:
    if p.flip:
        img = flip_horizontal(img)
    img = rotate(img, p.angle)
    img = zoom(img, p.scale)
    img = translate(img, 0.0, p.dy)
    return translate(img, p.dx, 0.0)


def apply_augmentation(img: ImageBuffer, cfg: AugmentConfig, rng) -> ImageBuffer:
    """Augment one image, drawing parameters from ``rng`` (advanced by 5 draws)."""
    return apply_params(img, sample_params(cfg, rng, img.height, img.width))


def epoch_stream(cfg: AugmentConfig, epoch: int) -> np.random.Generator:
    """The augmentation stream for one training epoch."""
    return make_rng(cfg.seed, epoch)
