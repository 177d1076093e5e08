from __future__ import annotations

import logging
import math
from typing import Callable, Iterable

import numpy as np

from ..errors import DivergedLoss, EmptyClass
from ..rng import make_rng
from .model import Model
from .optim import TrainConfig, optimizer_step

log = logging.getLogger(__name__)

# augment(batch, epoch, batch_index) -> batch
BatchTransform = Callable[[np.ndarray, int, int], np.ndarray]


def train(model: Model, X: np.ndarray, y: np.ndarray, cfg: TrainConfig,
          val: tuple[np.ndarray, np.ndarray] | None = None,
          augment: BatchTransform | None = None,
          callbacks: Iterable[Callable[[dict], None]] = ()) -> list[dict]:
    """Minibatch training, updating ``model`` in place.

    Each epoch shuffles with a stream keyed on ``(cfg.seed, epoch)``, so a
    rerun with the same seed is bit-identical. Returns one history entry per
    epoch with the mean train loss, running train accuracy and (when ``val``
    is given) validation accuracy.
    """
    y = np.asarray(y, dtype=np.int64)
    counts = np.bincount(y, minlength=model.num_classes)
    if len(counts) > model.num_classes:
        raise EmptyClass(f"labels exceed the model's {model.num_classes} classes")
    if np.any(counts == 0):
        missing = [int(c) for c in np.flatnonzero(counts == 0)]
        raise EmptyClass(f"no training samples for classes {missing}")

    state: dict = {}
    history = []
    n = len(y)
    for epoch in range(cfg.epochs):
        order = make_rng(cfg.seed, epoch).permutation(n)
        total_loss = 0.0
        correct = 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            xb = X[idx]
            if augment is not None:
                xb = augment(xb, epoch, b)
            fwd = model.forward(xb, y[idx])
            if not math.isfinite(fwd.loss):
                raise DivergedLoss(f"non-finite loss {fwd.loss} at epoch {epoch}, batch {b}")
            grads = model.backward(fwd)
            optimizer_step(model.params, grads, state, cfg)
            model.version += 1
            total_loss += fwd.loss * len(idx)
            correct += int(np.sum(np.argmax(fwd.logits, axis=1) == y[idx]))
        entry = {"epoch": epoch, "train_loss": total_loss / n, "train_accuracy": correct / n,
                 "val_accuracy": None}
        if val is not None and len(val[1]):
            pred, _ = model.predict(val[0])
            entry["val_accuracy"] = float(np.mean(pred == np.asarray(val[1])))
        history.append(entry)
        log.info("epoch %d loss %.4f train_acc %.3f val_acc %s", epoch, entry["train_loss"],
                 entry["train_accuracy"], entry["val_accuracy"])
        for cb in callbacks:
            cb(entry)
    return history
