"""Numpy autodiff engine and the CryoNet segmentation network."""

from .model import (DESK, FULL_SCALE, ConfigError, ModelConfig, ModelParams, cryonet_forward,
                    cse, encoder_forward, init_params, nested_decoder_forward, parameter_count, scse, sse)
from .tensor import ShapeError, Tensor, no_grad

__all__ = [
    "DESK", "FULL_SCALE", "ConfigError", "ModelConfig", "ModelParams", "cryonet_forward", "cse",
    "encoder_forward", "init_params", "nested_decoder_forward", "parameter_count", "scse", "sse",
    "ShapeError", "Tensor", "no_grad",
]
