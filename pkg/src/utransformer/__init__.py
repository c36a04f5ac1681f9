"""Universal Transformer with per-position dynamic halting, from scratch on numpy."""

from .model import ModelConfig, Parameters, init_params
from .tensor import Rng, Tensor, no_grad

__all__ = ["ModelConfig", "Parameters", "Rng", "Tensor", "init_params", "no_grad"]
__version__ = "0.1.0"
