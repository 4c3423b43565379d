"""Small numpy neural-network toolkit: layers, networks, losses, ADAM."""

from .layers import Conv2D, Dense, GlobalAvgPool, MaxPool2, SkipConcat, Upsample2, col2im, im2col, neighbourhood
from .losses import binary_cross_entropy_with_logits, pixel_cross_entropy, sigmoid, softmax, weighted_mae
from .network import Network, NetworkSpec, backward, forward, load_checkpoint, save_checkpoint
from .optim import AdamState, adam_step, lr_schedule

__all__ = [
    "AdamState",
    "Conv2D",
    "Dense",
    "GlobalAvgPool",
    "MaxPool2",
    "Network",
    "NetworkSpec",
    "SkipConcat",
    "Upsample2",
    "adam_step",
    "backward",
    "binary_cross_entropy_with_logits",
    "col2im",
    "forward",
    "im2col",
    "load_checkpoint",
    "lr_schedule",
    "pixel_cross_entropy",
    "save_checkpoint",
    "sigmoid",
    "softmax",
    "weighted_mae",
]
