from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeMismatch, StaleCache
from ..rng import make_rng
from .layers import (Conv2D, Dense, GlobalAvgPool, Layer, MaxPool2D, ReLU, Standardize,
                     softmax, softmax_xent)

HEAD = "softmax_xent_head"


@dataclass(frozen=True)
class ModelSpec:
    """Ordered layer list (dicts with a ``type`` key), input shape and init seed.

    The last entry must be ``{"type": "softmax_xent_head", "classes": K}``.
    """

    layers: tuple
    input_shape: tuple
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(dict(l) for l in self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        heads = [i for i, l in enumerate(self.layers) if l["type"] == HEAD]
        if heads != [len(self.layers) - 1]:
            raise ConfigError("model needs exactly one softmax_xent_head, placed last")

    @property
    def num_classes(self) -> int:
        return int(self.layers[-1]["classes"])

    def to_dict(self) -> dict:
        return {"layers": [dict(l) for l in self.layers], "input_shape": list(self.input_shape), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(tuple(d["layers"]), tuple(d["input_shape"]), int(d.get("seed", 0)))


def small_cnn(num_classes: int, input_shape=(3, 64, 64), seed: int = 0) -> ModelSpec:
    layers = (
        {"type": "conv2d", "out_ch": 8, "k": 3, "stride": 1, "pad": "same"},
        {"type": "relu"},
        {"type": "maxpool", "k": 2, "stride": 2},
        {"type": "conv2d", "out_ch": 16, "k": 3, "stride": 1, "pad": "same"},
        {"type": "relu"},
        {"type": "maxpool", "k": 2, "stride": 2},
        {"type": "global_avg_pool"},
        {"type": "dense", "out_dim": num_classes},
        {"type": HEAD, "classes": num_classes},
    )
    return ModelSpec(layers, input_shape, seed)


def linear_head(dim: int, num_classes: int, seed: int = 0) -> ModelSpec:
    layers = ({"type": "standardize"}, {"type": "dense", "out_dim": num_classes},
              {"type": HEAD, "classes": num_classes})
    return ModelSpec(layers, (dim,), seed)


def mlp_head(dim: int, num_classes: int, hidden: int = 128, seed: int = 0) -> ModelSpec:
    layers = ({"type": "standardize"}, {"type": "dense", "out_dim": hidden}, {"type": "relu"},
              {"type": "dense", "out_dim": num_classes}, {"type": HEAD, "classes": num_classes})
    return ModelSpec(layers, (dim,), seed)


def _build_layer(d: dict, in_shape) -> Layer:
    t = d["type"]
    if t == "conv2d":
        return Conv2D(in_shape[0], d["out_ch"], d.get("k", 3), d.get("stride", 1), d.get("pad", "same"))
    if t == "relu":
        return ReLU()
    if t == "maxpool":
        return MaxPool2D(d.get("k", 2), d.get("stride", 2))
    if t == "global_avg_pool":
        if len(in_shape) != 3:
            raise ShapeMismatch("global_avg_pool needs a (C, H, W) input")
        return GlobalAvgPool()
    if t == "dense":
        return Dense(int(np.prod(in_shape)), d["out_dim"])
    if t == "standardize":
        return Standardize(int(np.prod(in_shape)))
    raise ConfigError(f"unknown layer type {t!r}")


@dataclass
class ForwardResult:
    logits: np.ndarray
    loss: float | None
    caches: list
    activations: list = field(repr=False)
    labels: np.ndarray | None
    version: int


class Model:
    """A feed-forward network built from a ModelSpec.

    Parameters live in ``params`` keyed ``"<layer index>.<name>"``; fixed
    buffers (standardization statistics) live in ``buffers``. ``version`` is
    bumped on every parameter update so stale forward caches are detected.
    """

    def __init__(self, spec: ModelSpec, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.layers: list[Layer] = []
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        rng = make_rng(spec.seed)
        shape = spec.input_shape
        self.shapes = [shape]
        for i, d in enumerate(spec.layers[:-1]):
            layer = _build_layer(d, shape)
            shape = layer.output_shape(shape)
            for name, value in layer.init_params(rng, self.dtype).items():
                target = self.buffers if name in layer.buffers else self.params
                target[f"{i}.{name}"] = value
            self.layers.append(layer)
            self.shapes.append(shape)
        if shape != (spec.num_classes,):
            raise ShapeMismatch(f"network emits {shape}, head expects ({spec.num_classes},)")
        self.version = 0

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    def _layer_params(self, i: int) -> dict:
        prefix = f"{i}."
        out = {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}
        out.update({k[len(prefix):]: v for k, v in self.buffers.items() if k.startswith(prefix)})
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {**self.params, **self.buffers}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for key in list(self.params) + list(self.buffers):
            if key not in state:
                raise ShapeMismatch(f"missing tensor {key}")
            target = self.params if key in self.params else self.buffers
            if state[key].shape != target[key].shape:
                raise ShapeMismatch(f"tensor {key}: shape {state[key].shape} != {target[key].shape}")
            target[key] = np.array(state[key], dtype=self.dtype)
        self.version += 1

    def gradcam_layer(self) -> int:
        """Index of the default Grad-CAM target: last conv's post-ReLU output."""
        convs = [i for i, l in enumerate(self.layers) if isinstance(l, Conv2D)]
        if not convs:
            raise ShapeMismatch("model has no convolutional layer")
        i = convs[-1]
        if i + 1 < len(self.layers) and isinstance(self.layers[i + 1], ReLU):
            return i + 1
        return i

    def forward(self, x, labels=None) -> ForwardResult:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.spec.input_shape:
            raise ShapeMismatch(f"batch shape {x.shape[1:]} != model input {self.spec.input_shape}")
        caches, acts = [], []
        for i, layer in enumerate(self.layers):
            x, cache = layer.forward(self._layer_params(i), x)
            caches.append(cache)
            acts.append(x)
        loss = None
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            loss, _ = softmax_xent(x, labels)
        return ForwardResult(x, loss, caches, acts, labels, self.version)

    def backward_from(self, fwd: ForwardResult, dlogits, keep_activation_grads=False):
        """Backpropagate an arbitrary logit gradient.

        Returns ``(param_grads, act_grads)``; ``act_grads[i]`` is the gradient
        wrt layer ``i``'s output (only filled when requested).
        """
        if fwd.version != self.version:
            raise StaleCache("parameters changed since this forward pass")
        grads: dict[str, np.ndarray] = {}
        act_grads: list = [None] * len(self.layers)
        d = np.asarray(dlogits, dtype=self.dtype)
        for i in range(len(self.layers) - 1, -1, -1):
            if keep_activation_grads:
                act_grads[i] = d
            d, g = self.layers[i].backward(self._layer_params(i), d, fwd.caches[i])
            for name, value in g.items():
                grads[f"{i}.{name}"] = value
        return grads, act_grads

    def backward(self, fwd: ForwardResult, labels=None) -> dict[str, np.ndarray]:
        labels = fwd.labels if labels is None else np.asarray(labels, dtype=np.int64)
        if labels is None:
            raise StaleCache("backward needs a forward pass that was given labels")
        _, dlogits = softmax_xent(fwd.logits, labels)
        grads, _ = self.backward_from(fwd, dlogits)
        return grads

    def loss_and_grads(self, x, labels):
        fwd = self.forward(x, labels)
        return fwd.loss, self.backward(fwd), fwd

    def predict(self, x, batch_size: int = 256):
        """Class ids (argmax, ties to the lowest id) and softmax probabilities."""
        x = np.asarray(x)
        probs = [softmax(self.forward(x[i:i + batch_size]).logits) for i in range(0, len(x), batch_size)]
        probs = np.concatenate(probs) if probs else np.zeros((0, self.num_classes))
        return np.argmax(probs, axis=1), probs
