"""Layer forward/backward passes on NCHW float arrays.

Each layer exposes ``forward(params, x) -> (out, cache)`` and
``backward(params, dout, cache) -> (dx, grads)`` where ``grads`` maps the
layer's local parameter names to gradient arrays.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch


class Layer:
    kind = "layer"
    trainable: tuple[str, ...] = ()
    buffers: tuple[str, ...] = ()

    def output_shape(self, in_shape):
        return in_shape

    def init_params(self, rng, dtype) -> dict:
        return {}

    def forward(self, params, x):
        raise NotImplementedError

    def backward(self, params, dout, cache):
        raise NotImplementedError

    def spec(self) -> dict:
        return {"type": self.kind}


def he_uniform(rng, shape, fan_in, dtype):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D(Layer):
    kind = "conv2d"
    trainable = ("W", "b")

    def __init__(self, in_ch, out_ch, k=3, stride=1, pad="same"):
        self.in_ch, self.out_ch, self.k, self.stride = in_ch, out_ch, k, stride
        self.pad_spec = pad
        self.pad = (k - 1) // 2 if pad == "same" else int(pad)

    def spec(self):
        return {"type": self.kind, "out_ch": self.out_ch, "k": self.k, "stride": self.stride, "pad": self.pad_spec}

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_ch:
            raise ShapeMismatch(f"conv2d expects {self.in_ch} channels, got {c}")
        ho = (h + 2 * self.pad - self.k) // self.stride + 1
        wo = (w + 2 * self.pad - self.k) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeMismatch(f"conv2d input {in_shape} too small for kernel {self.k}")
        return (self.out_ch, ho, wo)

    def init_params(self, rng, dtype):
        fan_in = self.in_ch * self.k * self.k
        return {"W": he_uniform(rng, (self.out_ch, self.in_ch, self.k, self.k), fan_in, dtype),
                "b": np.zeros(self.out_ch, dtype=dtype)}

    def forward(self, params, x):
        k, s, p = self.k, self.stride, self.pad
        n, c, h, w = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        ho, wo = win.shape[2], win.shape[3]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        wmat = params["W"].reshape(self.out_ch, -1)
        out = cols @ wmat.T + params["b"]
        out = out.reshape(n, ho, wo, self.out_ch).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(out), (x.shape, xp.shape, cols, ho, wo)

    def backward(self, params, dout, cache):
        x_shape, xp_shape, cols, ho, wo = cache
        k, s, p = self.k, self.stride, self.pad
        n, c, h, w = x_shape
        dflat = dout.transpose(0, 2, 3, 1).reshape(-1, self.out_ch)
        wmat = params["W"].reshape(self.out_ch, -1)
        dW = (dflat.T @ cols).reshape(params["W"].shape)
        db = dflat.sum(axis=0)
        dcols = (dflat @ wmat).reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
        dxp = np.zeros(xp_shape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, i, j]
        dx = dxp[:, :, p:p + h, p:p + w] if p else dxp
        return dx, {"W": dW, "b": db}


class ReLU(Layer):
    kind = "relu"

    def forward(self, params, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, params, dout, mask):
        return dout * mask, {}


class MaxPool2D(Layer):
    kind = "maxpool"

    def __init__(self, k=2, stride=2):
        self.k, self.stride = k, stride

    def spec(self):
        return {"type": self.kind, "k": self.k, "stride": self.stride}

    def output_shape(self, in_shape):
        c, h, w = in_shape
        ho, wo = (h - self.k) // self.stride + 1, (w - self.k) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeMismatch(f"maxpool input {in_shape} smaller than window {self.k}")
        return (c, ho, wo)

    def forward(self, params, x):
        k, s = self.k, self.stride
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        win = win.reshape(win.shape[:4] + (k * k,))
        idx = np.argmax(win, axis=-1)  # first maximum wins ties
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return out, (x.shape, idx)

    def backward(self, params, dout, cache):
        x_shape, idx = cache
        k, s = self.k, self.stride
        ho, wo = idx.shape[2], idx.shape[3]
        dx = np.zeros(x_shape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + s * ho:s, j:j + s * wo:s] += dout * (idx == i * k + j)
        return dx, {}


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def output_shape(self, in_shape):
        return (in_shape[0],)

    def forward(self, params, x):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, params, dout, x_shape):
        h, w = x_shape[2], x_shape[3]
        dx = np.broadcast_to(dout[:, :, None, None] / (h * w), x_shape)
        return np.ascontiguousarray(dx), {}


class Dense(Layer):
    """Fully connected layer; flattens any trailing dimensions of its input."""

    kind = "dense"
    trainable = ("W", "b")

    def __init__(self, in_dim, out_dim):
        self.in_dim, self.out_dim = in_dim, out_dim

    def spec(self):
        return {"type": self.kind, "out_dim": self.out_dim}

    def output_shape(self, in_shape):
        if math.prod(in_shape) != self.in_dim:
            raise ShapeMismatch(f"dense expects {self.in_dim} inputs, got shape {in_shape}")
        return (self.out_dim,)

    def init_params(self, rng, dtype):
        return {"W": he_uniform(rng, (self.in_dim, self.out_dim), self.in_dim, dtype),
                "b": np.zeros(self.out_dim, dtype=dtype)}

    def forward(self, params, x):
        flat = x.reshape(x.shape[0], -1)
        return flat @ params["W"] + params["b"], (x.shape, flat)

    def backward(self, params, dout, cache):
        x_shape, flat = cache
        dW = flat.T @ dout
        db = dout.sum(axis=0)
        dx = (dout @ params["W"].T).reshape(x_shape)
        return dx, {"W": dW, "b": db}


class Standardize(Layer):
    """Fixed per-feature affine map ``(x - mean) / std``, fitted on training data."""

    kind = "standardize"
    buffers = ("mean", "std")

    def __init__(self, dim):
        self.dim = dim

    def output_shape(self, in_shape):
        if math.prod(in_shape) != self.dim:
            raise ShapeMismatch(f"standardize expects {self.dim} inputs, got shape {in_shape}")
        return (self.dim,)

    def init_params(self, rng, dtype):
        return {"mean": np.zeros(self.dim, dtype=dtype), "std": np.ones(self.dim, dtype=dtype)}

    def forward(self, params, x):
        flat = x.reshape(x.shape[0], -1)
        return (flat - params["mean"]) / params["std"], x.shape

    def backward(self, params, dout, x_shape):
        return (dout / params["std"]).reshape(x_shape), {}


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient wrt logits, computed in float64."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    n = z.shape[0]
    loss = float(np.mean(lse - z[np.arange(n), labels]))
    dlogits = softmax(logits)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n
