"""Central finite-difference gradient checking.

ReLU and max-pool make the loss piecewise smooth. A perturbation that flips
a ReLU mask or a pooling argmax gives a meaningless difference quotient, so
each coordinate starts at the nominal step and shrinks it until the
activation pattern at both ``p + h`` and ``p - h`` matches the unperturbed
one. Coordinates that sit exactly on a kink at every step are reported as
skipped rather than compared.

Errors are tensor-relative: ``max|a - n| / max(max|a|, max|n|)`` over the
coordinates of one parameter tensor. Elementwise ratios are unusable for
entries whose true gradient is ~1e-6, where O(h^2) truncation dominates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import MaxPool2D, ReLU
from .model import Model

STEPS = (1e-3, 1e-4, 1e-5, 1e-6)


def relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


def activation_pattern(model: Model, caches) -> list:
    out = []
    for layer, cache in zip(model.layers, caches):
        if isinstance(layer, ReLU):
            out.append(cache)
        elif isinstance(layer, MaxPool2D):
            out.append(cache[1])
    return out


def _same(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


@dataclass
class GradCheckReport:
    max_rel_error: dict = field(default_factory=dict)
    skipped: int = 0
    checked: int = 0

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def check_model(model: Model, x, labels, steps=STEPS, max_entries: int | None = None,
                rng=None) -> GradCheckReport:
    """Compare analytic parameter gradients with central differences.

    ``max_entries`` caps the coordinates examined per tensor (drawn with
    ``rng``); ``None`` checks every coordinate.
    """
    base = model.forward(x, labels)
    analytic = model.backward(base)
    base_pattern = activation_pattern(model, base.caches)
    report = GradCheckReport()
    for name, p in model.params.items():
        coords = list(np.ndindex(p.shape))
        if max_entries is not None and len(coords) > max_entries:
            pick = (rng or np.random.default_rng(0)).choice(len(coords), max_entries, replace=False)
            coords = [coords[i] for i in sorted(pick)]
        got, want = [], []
        for c in coords:
            orig = p[c]
            numeric = None
            for h in steps:
                p[c] = orig + h
                fp = model.forward(x, labels)
                p[c] = orig - h
                fm = model.forward(x, labels)
                p[c] = orig
                if (_same(activation_pattern(model, fp.caches), base_pattern)
                        and _same(activation_pattern(model, fm.caches), base_pattern)):
                    numeric = (fp.loss - fm.loss) / (2 * h)
                    break
            if numeric is None:
                report.skipped += 1
                continue
            report.checked += 1
            got.append(analytic[name][c])
            want.append(numeric)
        report.max_rel_error[name] = relative_error(got, want)
    return report


def check_layer(layer, params: dict, x: np.ndarray, rng, h: float = 1e-3) -> dict:
    """Check one layer in isolation against ``L = sum(R * layer(x))`` for random R.

    Returns the max relative error for the input gradient and each parameter.
    Inputs should be drawn so no kink lies within ``h`` of any coordinate.
    """
    out, cache = layer.forward(params, x)
    r = rng.normal(size=out.shape)
    dx, grads = layer.backward(params, r, cache)

    def loss():
        return float(np.sum(r * layer.forward(params, x)[0]))

    errors = {}
    for name, arr, analytic in [("x", x, dx)] + [(k, params[k], grads[k]) for k in grads]:
        numeric = np.zeros(arr.shape)
        for c in np.ndindex(arr.shape):
            orig = arr[c]
            arr[c] = orig + h
            lp = loss()
            arr[c] = orig - h
            lm = loss()
            arr[c] = orig
            numeric[c] = (lp - lm) / (2 * h)
        errors[name] = relative_error(analytic, numeric)
    return errors
