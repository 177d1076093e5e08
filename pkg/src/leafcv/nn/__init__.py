"""Small numpy neural-network engine with hand-written backward passes."""
from .layers import softmax, softmax_xent
from .model import ForwardResult, Model, ModelSpec, linear_head, mlp_head, small_cnn
from .optim import TrainConfig, optimizer_step
from .train import train

__all__ = [
    "ForwardResult", "Model", "ModelSpec", "TrainConfig", "linear_head", "mlp_head",
    "optimizer_step", "small_cnn", "softmax", "softmax_xent", "train",
]
