from .checkpoint import FORMAT_VERSION, MAGIC, load_checkpoint, read_checkpoint_config, save_checkpoint
from .model import (
    SCALES,
    SRModel,
    SRModelConfig,
    build_model,
    count_parameters,
    init_identity,
    sr_forward,
)
from .schedule import lr_at
from .train import TrainConfig, TrainHistory, evaluate_psnr, train

__all__ = [
    "FORMAT_VERSION",
    "MAGIC",
    "SCALES",
    "SRModel",
    "SRModelConfig",
    "TrainConfig",
    "TrainHistory",
    "build_model",
    "count_parameters",
    "evaluate_psnr",
    "init_identity",
    "load_checkpoint",
    "lr_at",
    "read_checkpoint_config",
    "save_checkpoint",
    "sr_forward",
    "train",
]
