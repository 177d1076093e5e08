"""HOG and uniform-LBP descriptors, and the raw-pixel baseline."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ImageTooSmall, InvalidImage
from .imaging import ImageBuffer, sample_bilinear, to_grayscale

KINDS = ("raw", "hog", "lbp")


@dataclass(frozen=True)
class HogParams:
    orientations: int = 9
    cell_size: int = 14
    block_size: int = 2
    block_stride: int = 1
    clip: float = 0.2
    signed_gradients: bool = False

    def __post_init__(self):
        if self.orientations < 1 or self.cell_size < 2 or self.block_size < 1 or self.block_stride < 1:
            raise ConfigError(f"invalid HOG parameters {self}")

    def grid(self, width: int, height: int) -> tuple[int, int]:
        """Number of blocks along (x, y); raises if the image cannot hold one block."""
        ncx, ncy = width // self.cell_size, height // self.cell_size
        if ncx < self.block_size or ncy < self.block_size:
            raise ImageTooSmall(
                f"{width}x{height} image holds {ncx}x{ncy} cells, fewer than block size {self.block_size}")
        return ((ncx - self.block_size) // self.block_stride + 1,
                (ncy - self.block_size) // self.block_stride + 1)

    def dim(self, width: int, height: int) -> int:
        nbx, nby = self.grid(width, height)
        return nbx * nby * self.block_size ** 2 * self.orientations


@dataclass(frozen=True)
class LbpParams:
    radius: int = 3
    points: int = 24
    method: str = "uniform"

    def __post_init__(self):
        if self.points < 4 or self.radius < 1:
            raise ConfigError(f"invalid LBP parameters {self}")
        if self.method != "uniform":
            raise ConfigError(f"unsupported LBP method {self.method!r}")


@dataclass(frozen=True)
class RawParams:
    pass


def params_fingerprint(kind: str, params, **extra) -> bytes:
    """SHA-256 over the canonical JSON of a parameter struct plus any extra keys."""
    payload = {"kind": kind, "params": asdict(params), **extra}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).digest()


def make_params(kind: str, values: dict | None = None):
    cls = {"raw": RawParams, "hog": HogParams, "lbp": LbpParams}.get(kind)
    if cls is None:
        raise ConfigError(f"unknown representation {kind!r}")
    try:
        return cls(**(values or {}))
    except TypeError as exc:
        raise ConfigError(f"bad {kind} parameters: {exc}") from exc


@dataclass(frozen=True, eq=False)
class FeatureVector:
    kind: str
    values: np.ndarray
    params_fingerprint: bytes = field(repr=False)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def _require_gray(gray: ImageBuffer) -> np.ndarray:
    if gray.channels != 1:
        raise InvalidImage("descriptor expects a 1-channel image")
    return gray.pixels[:, :, 0].astype(np.float64)


# ---------------------------------------------------------------------------
# HOG

def compute_gradients(gray: ImageBuffer, signed: bool = False):
    """Centered-difference gradients with border replication.

    Returns ``(magnitude, orientation)``; orientation lies in [0, pi) for
    unsigned gradients and [0, 2*pi) for signed ones.
    """
    g = _require_gray(gray)
    p = np.pad(g, 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    mag = np.hypot(gx, gy)
    period = 2 * math.pi if signed else math.pi
    ori = np.mod(np.arctan2(gy, gx), period)
    ori[ori >= period] = 0.0
    return mag, ori


def _l2hys(v: np.ndarray, clip: float) -> np.ndarray:
    # v: (..., D); zero rows stay zero
    norm = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    out = np.divide(v, norm, out=np.zeros_like(v), where=norm > 0)
    out = np.minimum(out, clip)
    norm = np.sqrt(np.sum(out * out, axis=-1, keepdims=True))
    return np.divide(out, norm, out=np.zeros_like(out), where=norm > 0)


def cell_histograms(gray: ImageBuffer, p: HogParams) -> np.ndarray:
    """(cells_y, cells_x, orientations) magnitude histograms, hard cell assignment."""
    mag, ori = compute_gradients(gray, p.signed_gradients)
    c = p.cell_size
    ncy, ncx = gray.height // c, gray.width // c
    mag = mag[:ncy * c, :ncx * c]
    ori = ori[:ncy * c, :ncx * c]
    n = p.orientations
    period = 2 * math.pi if p.signed_gradients else math.pi
    pos = ori / (period / n) - 0.5
    lo = np.floor(pos)
    frac = pos - lo
    lo_bin = np.mod(lo.astype(np.int64), n)
    hi_bin = np.mod(lo_bin + 1, n)
    cy = np.arange(ncy * c) // c
    cx = np.arange(ncx * c) // c
    cell = (cy[:, None] * ncx + cx[None, :]) * n
    size = ncy * ncx * n
    hist = np.bincount((cell + lo_bin).ravel(), (mag * (1.0 - frac)).ravel(), size)
    hist += np.bincount((cell + hi_bin).ravel(), (mag * frac).ravel(), size)
    return hist.reshape(ncy, ncx, n)


def hog_extract(gray: ImageBuffer, p: HogParams = HogParams()) -> FeatureVector:
    nbx, nby = p.grid(gray.width, gray.height)
    hist = cell_histograms(gray, p)
    b, s = p.block_size, p.block_stride
    blocks = np.lib.stride_tricks.sliding_window_view(hist, (b, b), axis=(0, 1))
    blocks = blocks[::s, ::s][:nby, :nbx]           # (nby, nbx, n, b, b)
    blocks = blocks.transpose(0, 1, 3, 4, 2).reshape(nby, nbx, -1)
    values = _l2hys(blocks, p.clip).reshape(-1)
    return FeatureVector("hog", values, params_fingerprint("hog", p))


# ---------------------------------------------------------------------------
# LBP

def lbp_offsets(p: LbpParams) -> list[tuple[float, float]]:
    """(dx, dy) of each sampling point, snapped so on-grid points are exact."""
    out = []
    for k in range(p.points):
        theta = 2 * math.pi * k / p.points
        dx = round(p.radius * math.cos(theta), 9) + 0.0
        dy = round(-p.radius * math.sin(theta), 9) + 0.0
        out.append((dx, dy))
    return out


def uniform_code(bits: np.ndarray) -> np.ndarray:
    """Map bit planes (P, ...) to uniform codes: popcount if <= 2 circular transitions, else P+1."""
    npts = bits.shape[0]
    transitions = np.sum(bits != np.roll(bits, -1, axis=0), axis=0)
    ones = np.sum(bits, axis=0)
    return np.where(transitions <= 2, ones, npts + 1)


def lbp_code_image(gray: ImageBuffer, p: LbpParams = LbpParams()) -> np.ndarray:
    """Integer uniform-LBP code for every pixel, same size as the input."""
    g = _require_gray(gray)
    h, w = g.shape
    if w <= 2 * p.radius or h <= 2 * p.radius:
        raise ImageTooSmall(f"{w}x{h} image too small for LBP radius {p.radius}")
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    px = g[:, :, None]
    bits = np.empty((p.points, h, w), dtype=bool)
    for k, (dx, dy) in enumerate(lbp_offsets(p)):
        neighbor = sample_bilinear(px, xs + dx, ys + dy, "reflect")[:, :, 0]
        bits[k] = neighbor >= g
    return uniform_code(bits).astype(np.int64)


def lbp_extract(gray: ImageBuffer, p: LbpParams = LbpParams()) -> FeatureVector:
    codes = lbp_code_image(gray, p)
    return FeatureVector("lbp", codes.reshape(-1).astype(np.float64), params_fingerprint("lbp", p))


def raw_flatten(img: ImageBuffer) -> FeatureVector:
    g = to_grayscale(img).pixels[:, :, 0].astype(np.float64)
    return FeatureVector("raw", g.reshape(-1), params_fingerprint("raw", RawParams()))


def extract(img: ImageBuffer, kind: str, params=None) -> FeatureVector:
    """Dispatch to the descriptor for ``kind``; color input is grayscaled first."""
    params = params if params is not None else make_params(kind)
    if kind == "raw":
        return raw_flatten(img)
    gray = to_grayscale(img)
    if kind == "hog":
        return hog_extract(gray, params)
    if kind == "lbp":
        return lbp_extract(gray, params)
    raise ConfigError(f"unknown representation {kind!r}")
