from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check, tiny_config
from .layers import ShapeError, conv1d, dense, dropout, maxpool, sigmoid
from .model import (
    PARAM_NAMES,
    ConfigError,
    ForwardTape,
    ModelConfig,
    ModelParams,
    backward,
    config_from_dict,
    forward,
    init_params,
    predict,
)

__all__ = [
    "PARAM_NAMES", "CheckpointError", "ConfigError", "ForwardTape", "ModelConfig", "ModelParams",
    "ShapeError", "backward", "config_from_dict", "conv1d", "dense", "dropout", "forward",
    "grad_check", "init_params", "load_checkpoint", "maxpool", "predict", "save_checkpoint",
    "sigmoid", "tiny_config",
]
