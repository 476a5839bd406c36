"""Dual-stream (face + UV texture) video transformer for real/fake video
classification, built on a small reverse-mode tensor engine, with anchored
incremental fine-tuning, synthetic probe tasks, and prediction fusion."""

from .config import BackboneConfig, ConfigError, ModelConfig, RunConfig, TrainConfig
from .data import DataError, FrameSample, VideoSample
from .model import ModelParams, init_params, model_forward
from .tensor import Precision, ShapeError, Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig",
    "ConfigError",
    "DataError",
    "FrameSample",
    "ModelConfig",
    "ModelParams",
    "Precision",
    "RunConfig",
    "ShapeError",
    "Tensor",
    "TrainConfig",
    "VideoSample",
    "backward",
    "init_params",
    "model_forward",
    "no_grad",
    "__version__",
]
