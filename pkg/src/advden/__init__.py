"""Adversarial encoder-decoder denoiser for one-dimensional signals."""

from .errors import CheckpointError, ConfigError, DataError, DenoiserError, NonFiniteError, ShapeError
from .model import ModelConfig, build_model, denoise, forward, param_count
from .tensor import Var, backward, conv1d_dilated, deconv1d_dilated, no_grad
from .training import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConfigError", "DataError", "DenoiserError", "NonFiniteError", "ShapeError",
    "ModelConfig", "build_model", "denoise", "forward", "param_count",
    "Var", "backward", "conv1d_dilated", "deconv1d_dilated", "no_grad",
    "TrainConfig", "fit",
]
