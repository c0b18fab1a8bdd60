"""Desk-scale model-based multi-agent RL with a bi-level latent world model."""

from .config import RunConfig, parse_config
from .tensor import Tensor, forward_backward, no_grad
from .trainer import Trainer

__all__ = ["RunConfig", "parse_config", "Tensor", "forward_backward",
           "no_grad", "Trainer"]
__version__ = "0.1.0"
