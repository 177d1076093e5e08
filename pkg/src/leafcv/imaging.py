"""Image buffers, PPM/PGM codecs, grayscale conversion and bilinear sampling."""
from __future__ import annotations

import io
import re
from dataclasses import dataclass

import numpy as np

from .errors import ChannelMismatch, CorruptStream, InvalidImage, UnsupportedFormat

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
WORKING_SIZE = 224


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Immutable float32 raster of shape (height, width, channels), values in [0, 1].

    Memory layout is row-major and channel-interleaved, so ``data`` is the
    flat pixel sequence.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise InvalidImage(f"expected (H, W, 1|3) array, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidImage(f"empty image {px.shape}")
        px = np.array(px, dtype=np.float32, copy=True)
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise InvalidImage("pixel values must be finite and within [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def data(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"ImageBuffer({self.width}x{self.height}x{self.channels})"


def from_float64(arr: np.ndarray) -> ImageBuffer:
    """Wrap a float64 working array, clipping rounding spill outside [0, 1]."""
    return ImageBuffer(np.clip(arr, 0.0, 1.0))


# ---------------------------------------------------------------------------
# codecs

_PNM_HEADER = re.compile(rb"\A(P[56])")


def _read_pnm_tokens(buf: bytes, count: int, pos: int):
    tokens = []
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise CorruptStream("truncated PNM header")
        tok = buf[start:pos]
        if not tok.isdigit():
            raise CorruptStream(f"bad PNM header token {tok!r}")
        tokens.append(int(tok))
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise CorruptStream("missing whitespace after PNM header")
    return tokens, pos + 1


def _decode_pnm(buf: bytes) -> ImageBuffer:
    magic = buf[:2]
    channels = 1 if magic == b"P5" else 3
    (width, height, maxval), pos = _read_pnm_tokens(buf, 3, 2)
    if width < 1 or height < 1:
        raise CorruptStream("zero image dimension")
    if not 1 <= maxval <= 255:
        raise UnsupportedFormat(f"maxval {maxval} not supported (8-bit only)")
    need = width * height * channels
    raster = buf[pos:pos + need]
    if len(raster) < need:
        raise CorruptStream(f"raster truncated: {len(raster)} of {need} bytes")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    if arr.max(initial=0) > maxval:
        raise CorruptStream("sample exceeds maxval")
    return ImageBuffer(arr.astype(np.float64) / maxval)


def _decode_with_pillow(buf: bytes) -> ImageBuffer:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(io.BytesIO(buf)) as im:
            im.load()
            im = im.convert("L" if im.mode in ("L", "LA", "1") else "RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise UnsupportedFormat(str(exc)) from exc
    except (OSError, SyntaxError, ValueError) as exc:
        raise CorruptStream(str(exc)) from exc
    return ImageBuffer(arr.astype(np.float64) / 255.0)


def decode_image(buf: bytes, format_hint: str | None = None) -> ImageBuffer:
    """Decode PNG, JPEG or binary PGM/PPM bytes into an ImageBuffer.

    8-bit sample ``v`` maps to ``v / 255``. PNM is parsed natively; PNG and
    JPEG go through Pillow.
    """
    if not buf:
        raise CorruptStream("empty byte stream")
    hint = (format_hint or "").lower().lstrip(".")
    if _PNM_HEADER.match(buf) or hint in ("ppm", "pgm"):
        if not _PNM_HEADER.match(buf):
            raise CorruptStream("missing P5/P6 magic")
        return _decode_pnm(buf)
    if buf[:8] == b"\x89PNG\r\n\x1a\n" or buf[:3] == b"\xff\xd8\xff":
        return _decode_with_pillow(buf)
    if hint in ("png", "jpg", "jpeg"):
        raise CorruptStream(f"stream does not start with a {hint} signature")
    raise UnsupportedFormat("unrecognized image signature")


def quantize(img: ImageBuffer) -> np.ndarray:
    """8-bit levels with round-half-up."""
    return np.floor(img.pixels.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)


def encode_image(img: ImageBuffer, fmt: str) -> bytes:
    fmt = fmt.upper()
    q = quantize(img)
    if fmt == "PGM":
        if img.channels != 1:
            raise ChannelMismatch("PGM requires a 1-channel image")
        return b"P5\n%d %d\n255\n" % (img.width, img.height) + q.tobytes()
    if fmt == "PPM":
        if img.channels != 3:
            raise ChannelMismatch("PPM requires a 3-channel image")
        return b"P6\n%d %d\n255\n" % (img.width, img.height) + q.tobytes()
    if fmt == "PNG":
        from PIL import Image

        arr = q[:, :, 0] if img.channels == 1 else q
        out = io.BytesIO()
        Image.fromarray(arr, mode="L" if img.channels == 1 else "RGB").save(out, format="PNG")
        return out.getvalue()
    raise UnsupportedFormat(f"cannot encode {fmt}")


def read_image(path) -> ImageBuffer:
    with open(path, "rb") as fh:
        return decode_image(fh.read(), str(path).rsplit(".", 1)[-1])


def write_image(path, img: ImageBuffer, fmt: str | None = None) -> None:
    fmt = fmt or str(path).rsplit(".", 1)[-1]
    with open(path, "wb") as fh:
        fh.write(encode_image(img, fmt))


# ---------------------------------------------------------------------------
# pixel operations

def to_grayscale(img: ImageBuffer) -> ImageBuffer:
    if img.channels == 1:
        return img
    px = img.pixels.astype(np.float64)
    r, g, b = LUMA_WEIGHTS
    gray = r * px[:, :, 0] + g * px[:, :, 1] + b * px[:, :, 2]
    return from_float64(gray)


def to_rgb(img: ImageBuffer) -> ImageBuffer:
    if img.channels == 3:
        return img
    return ImageBuffer(np.repeat(img.pixels, 3, axis=2))


def to_chw(img: ImageBuffer, input_shape) -> np.ndarray:
    """Convert to a (C, H, W) float32 array matching a network input shape."""
    c, h, w = input_shape
    img = to_rgb(img) if c == 3 else to_grayscale(img)
    img = resize_bilinear(img, w, h)
    return np.ascontiguousarray(img.pixels.transpose(2, 0, 1))


def _border_index(idx: np.ndarray, n: int, mode: str) -> np.ndarray:
    if mode == "clamp":
        return np.clip(idx, 0, n - 1)
    if mode == "reflect":
        # half-sample symmetric: ... c b a | a b c ... | c b a ...
        period = np.mod(idx, 2 * n)
        return np.where(period >= n, 2 * n - 1 - period, period)
    raise ValueError(f"unknown border mode {mode!r}")


def sample_bilinear(px: np.ndarray, xs: np.ndarray, ys: np.ndarray, mode: str = "reflect") -> np.ndarray:
    """Bilinearly sample ``px`` (H, W, C) at float coordinates in pixel-center units.

    Returns float64 of shape ``xs.shape + (C,)``. Interpolation is written as
    ``a + w * (b - a)`` so integer coordinates reproduce source values exactly.
    """
    h, w = px.shape[:2]
    px = np.asarray(px, dtype=np.float64)
    if mode == "clamp":
        xs = np.clip(xs, 0.0, w - 1)
        ys = np.clip(ys, 0.0, h - 1)
    x0f = np.floor(xs)
    y0f = np.floor(ys)
    wx = (xs - x0f)[..., None]
    wy = (ys - y0f)[..., None]
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)
    xa = _border_index(x0, w, mode)
    xb = _border_index(x0 + 1, w, mode)
    ya = _border_index(y0, h, mode)
    yb = _border_index(y0 + 1, h, mode)
    a = px[ya, xa]
    b = px[ya, xb]
    c = px[yb, xa]
    d = px[yb, xb]
    top = a + wx * (b - a)
    bottom = c + wx * (d - c)
    return top + wy * (bottom - top)


def resize_array(px: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Half-pixel-center bilinear resize of an (H, W, C) array, border-clamped."""
    h, w = px.shape[:2]
    if (w, h) == (out_w, out_h):
        return np.asarray(px, dtype=np.float64)
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return sample_bilinear(px, gx, gy, mode="clamp")


def resize_bilinear(img: ImageBuffer, out_w: int, out_h: int) -> ImageBuffer:
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be >= 1")
    if (img.width, img.height) == (out_w, out_h):
        return img
    return from_float64(resize_array(img.pixels, out_w, out_h))
