from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def optimizer_step(params: dict, grads: dict, state: dict, cfg: TrainConfig) -> dict:
    """Update ``params`` in place and return the optimizer state.

    SGD: ``v <- mu*v - lr*g; p <- p + v``. Adam: bias-corrected moments.
    Weight decay adds ``wd * p`` to the gradient of weight matrices only.
    """
    t = state.get("t", 0) + 1
    state["t"] = t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter {name} shape {p.shape}")
        if cfg.weight_decay and name.endswith(".W"):
            g = g + cfg.weight_decay * p
        if cfg.optimizer == "sgd":
            v = state.setdefault(("v", name), np.zeros(p.shape))
            v *= cfg.momentum
            v -= cfg.learning_rate * g
            p += v.astype(p.dtype)
        else:
            m = state.setdefault(("m", name), np.zeros(p.shape))
            s = state.setdefault(("s", name), np.zeros(p.shape))
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            s *= cfg.beta2
            s += (1 - cfg.beta2) * g * g
            m_hat = m / (1 - cfg.beta1 ** t)
            s_hat = s / (1 - cfg.beta2 ** t)
            p -= (cfg.learning_rate * m_hat / (np.sqrt(s_hat) + cfg.epsilon)).astype(p.dtype)
    return state
