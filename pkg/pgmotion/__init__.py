"""
pgmotion - Progressive multi-stage human motion prediction

Dense graph convolutional stage networks refined stage by stage against
smoothed intermediate targets, with training, evaluation and ablation tools.
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .datasets import (
    WindowedDataset,
    downsample,
    export_csv,
    import_csv,
    load_sequence,
    save_sequence,
    sliding_windows,
    synth_motion,
)
from .exceptions import (
    CheckpointError,
    ConfigError,
    DataError,
    HorizonError,
    NumericalError,
    PGMotionError,
    ShapeError,
)
from .metrics import horizon_report, mae_at, mpjpe_at, per_joint_mpjpe
from .models import HorizonReport, ModelConfig, SynthParams, TrainConfig
from .network import ModelParams, count_parameters, init_model, multistage_forward, predict
from .sequence import MotionSequence
from .targets import aas_once, build_stage_targets, gaussian_smooth, mean_x_pad
from .training import AdamState, adam_step, gradient_check, lr_at_epoch, multi_stage_loss, stage_loss, train

__version__ = "1.0.0"

__all__ = [
    "AdamState",
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "HorizonError",
    "HorizonReport",
    "ModelConfig",
    "ModelParams",
    "MotionSequence",
    "NumericalError",
    "PGMotionError",
    "ShapeError",
    "SynthParams",
    "TrainConfig",
    "WindowedDataset",
    "aas_once",
    "adam_step",
    "build_stage_targets",
    "count_parameters",
    "downsample",
    "export_csv",
    "gaussian_smooth",
    "gradient_check",
    "horizon_report",
    "import_csv",
    "init_model",
    "load_checkpoint",
    "load_sequence",
    "lr_at_epoch",
    "mae_at",
    "mean_x_pad",
    "mpjpe_at",
    "multi_stage_loss",
    "multistage_forward",
    "per_joint_mpjpe",
    "predict",
    "save_checkpoint",
    "save_sequence",
    "sliding_windows",
    "stage_loss",
    "synth_motion",
    "train",
]
