"""Grad-CAM heatmaps, upsampling and jet overlays."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidClassId, InvalidImage, ResolutionMismatch
from .imaging import ImageBuffer, from_float64, resize_array, to_chw, to_rgb
from .nn.model import Model

# (position, (r, g, b)) breakpoints of the piecewise-linear jet colormap
JET_BREAKPOINTS = (
    (0.0, (0.0, 0.0, 0.5)),
    (0.125, (0.0, 0.0, 1.0)),
    (0.375, (0.0, 1.0, 1.0)),
    (0.625, (1.0, 1.0, 0.0)),
    (0.875, (1.0, 0.0, 0.0)),
    (1.0, (0.5, 0.0, 0.0)),
)


@dataclass(frozen=True, eq=False)
class Heatmap:
    values: np.ndarray  # (height, width), finite, within [0, 1]

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or not np.all(np.isfinite(v)) or v.min(initial=0) < 0 or v.max(initial=0) > 1:
            raise InvalidImage("heatmap must be a finite 2-D map within [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def gradcam_raw(model: Model, x: np.ndarray, target_class: int, layer: int | None = None):
    """Unnormalized Grad-CAM for one (C, H, W) input.

    Returns ``(cam, weights, activation)`` where ``weights`` are the
    spatially averaged gradients of the target logit wrt the activation.
    """
    if not 0 <= target_class < model.num_classes:
        raise InvalidClassId(f"class id {target_class} outside [0, {model.num_classes})")
    layer = model.gradcam_layer() if layer is None else layer
    fwd = model.forward(np.asarray(x)[None])
    dlogits = np.zeros((1, model.num_classes))
    dlogits[0, target_class] = 1.0
    _, act_grads = model.backward_from(fwd, dlogits, keep_activation_grads=True)
    A = fwd.activations[layer][0].astype(np.float64)
    G = act_grads[layer][0].astype(np.float64)
    weights = G.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, A, axes=1), 0.0)
    return cam, weights, A


def normalize_cam(cam: np.ndarray) -> Heatmap:
    peak = cam.max(initial=0.0)
    if peak <= 0:
        return Heatmap(np.zeros_like(cam))
    return Heatmap(np.clip(cam / peak, 0.0, 1.0))


def gradcam_heatmap(model: Model, image: ImageBuffer, target_class: int, layer: int | None = None) -> Heatmap:
    """Max-normalized Grad-CAM at the target layer's spatial resolution."""
    x = to_chw(image, model.spec.input_shape)
    cam, _, _ = gradcam_raw(model, x, target_class, layer)
    return normalize_cam(cam)


def upsample_heatmap(h: Heatmap, out_w: int, out_h: int) -> Heatmap:
    if (h.width, h.height) == (out_w, out_h):
        return h
    up = resize_array(h.values[:, :, None], out_w, out_h)[:, :, 0]
    return Heatmap(np.clip(up, 0.0, 1.0))


def jet(values: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to RGB; output shape ``values.shape + (3,)``."""
    pos = [p for p, _ in JET_BREAKPOINTS]
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    channels = [np.interp(v, pos, [rgb[i] for _, rgb in JET_BREAKPOINTS]) for i in range(3)]
    return np.stack(channels, axis=-1)


def render_overlay(img: ImageBuffer, h: Heatmap, alpha: float = 0.4, colormap: str = "jet") -> ImageBuffer:
    if colormap != "jet":
        raise ValueError(f"unsupported colormap {colormap!r}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if (img.width, img.height) != (h.width, h.height):
        raise ResolutionMismatch(
            f"heatmap {h.width}x{h.height} does not match image {img.width}x{img.height}")
    rgb = to_rgb(img).pixels.astype(np.float64)
    return from_float64((1.0 - alpha) * rgb + alpha * jet(h.values))
