"""
pgmotion Data Models
"""

from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Mode(str, Enum):
    """Forward pass mode"""
    TRAIN = "train"
    EVAL = "eval"


class CopyAxis(str, Enum):
    """Axis along which the encoder features are duplicated"""
    TEMPORAL = "temporal"
    SPATIAL = "spatial"
    CHANNEL = "channel"


class AdjacencyInit(str, Enum):
    UNIFORM = "uniform"                  # U(-1/sqrt(n), 1/sqrt(n))
    IDENTITY_NOISE = "identity_noise"    # I + small uniform noise


class Representation(str, Enum):
    """What the D pose coordinates hold"""
    POSITION = "position"   # millimeters, scored by MPJPE
    ANGLE = "angle"         # radians, scored by MAE


class LossKind(str, Enum):
    PER_JOINT_NORM = "per_joint_norm"
    ABSOLUTE = "absolute"
    SQUARED = "squared"


class Supervision(str, Enum):
    """How intermediate stages are supervised"""
    AAS = "aas"
    GAUSSIAN = "gaussian"
    MEAN_X = "mean_x"
    GT = "gt"
    NONE = "none"


class Padding(str, Enum):
    """Initial guess appended to the observation for the first stage"""
    LAST_POSE = "last_pose"
    MEAN_X = "mean_x"


class SmoothMethod(str, Enum):
    AAS = "aas"
    GAUSSIAN = "gaussian"
    MEAN_X = "mean-x"


class Metric(str, Enum):
    MPJPE = "mpjpe"
    MAE = "mae"


DATASET_PRESETS: Dict[str, Dict[str, int]] = {
    "h36m": {"t_h": 10, "t_f": 25, "joints": 22, "dims": 3},
    "cmu": {"t_h": 10, "t_f": 25, "joints": 25, "dims": 3},
    "3dpw": {"t_h": 10, "t_f": 30, "joints": 23, "dims": 3},
}


class ModelConfig(BaseModel):
    """Architecture of the multi-stage Encoder-Copy-Decoder model"""
    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    num_stages: int = Field(default=4, ge=1, description="T, number of stages")
    t_h: int = Field(default=10, ge=1, description="Observed frames")
    t_f: int = Field(default=25, ge=1, description="Future frames")
    joints: int = Field(default=22, ge=1)
    dims: int = Field(default=3, ge=1, description="Coordinates per joint")
    features: int = Field(default=16, ge=1)
    encoder_gcbs: int = Field(default=1, ge=0)
    decoder_gcbs: int = Field(default=2, ge=0)
    copy_count: int = 1
    copy_axis: CopyAxis = CopyAxis.TEMPORAL
    dropout_rate: float = Field(default=0.3, ge=0.0, lt=1.0)
    bn_eps: float = Field(default=1e-5, gt=0.0)
    bn_momentum: float = Field(default=0.1, gt=0.0, lt=1.0)
    share_weights: bool = False
    adjacency_init: AdjacencyInit = AdjacencyInit.UNIFORM
    representation: Representation = Representation.POSITION

    @model_validator(mode="after")
    def validate_copy(self):
        if self.copy_axis == CopyAxis.TEMPORAL:
            allowed = (0, 1, 3)
        else:
            allowed = (0, 1)
        if self.copy_count not in allowed:
            raise ValueError(
                f"copy_count {self.copy_count} unsupported along {self.copy_axis.value} axis (allowed {allowed})"
            )
        return self

    @classmethod
    def preset(cls, name: str, **overrides) -> "ModelConfig":
        """Config with the sequence lengths and skeleton size of a known dataset"""
        if name not in DATASET_PRESETS:
            raise ValueError(f"Unknown dataset preset '{name}'")
        return cls(**{**DATASET_PRESETS[name], **overrides})

    @property
    def seq_len(self) -> int:
        return self.t_h + self.t_f

    @property
    def copies(self) -> int:
        return 1 + self.copy_count

    @property
    def decoder_frames(self) -> int:
        return self.seq_len * (self.copies if self.copy_axis == CopyAxis.TEMPORAL else 1)

    @property
    def decoder_joints(self) -> int:
        return self.joints * (self.copies if self.copy_axis == CopyAxis.SPATIAL else 1)

    @property
    def decoder_features(self) -> int:
        return self.features * (self.copies if self.copy_axis == CopyAxis.CHANNEL else 1)


class TrainConfig(BaseModel):
    """Optimizer, schedule and supervision settings"""
    model_config = ConfigDict(extra="forbid")

    lr0: float = Field(default=0.005, gt=0.0)
    lr_decay: float = Field(default=0.96, gt=0.0, le=1.0)
    epochs: int = Field(default=50, ge=0)
    batch_size: int = Field(default=16, ge=1)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    loss_kind: LossKind = LossKind.PER_JOINT_NORM
    seed: int = 0
    intermediate_supervision: Supervision = Supervision.AAS
    gaussian_window: int = Field(default=21, ge=3)
    target_mean_x: int = Field(default=25, ge=1)
    padding: Padding = Padding.LAST_POSE
    padding_mean_x: int = Field(default=25, ge=1)
    max_steps: Optional[int] = Field(default=None, ge=0, description="Stop after this many optimizer steps")
    horizons_ms: List[int] = Field(default_factory=lambda: [80, 160, 320, 400, 560, 1000])

    @field_validator("gaussian_window")
    @classmethod
    def validate_window(cls, v):
        if v % 2 == 0:
            raise ValueError("gaussian_window must be odd")
        return v

    @field_validator("horizons_ms", mode="before")
    @classmethod
    def parse_list(cls, v):
        if isinstance(v, str):
            return [int(item.strip()) for item in v.split(",") if item.strip()]
        return v


class SynthParams(BaseModel):
    """Sum-of-sinusoids trajectory generator settings"""
    model_config = ConfigDict(extra="forbid")

    components: int = Field(default=3, ge=1, description="K sinusoids per trajectory")
    amplitude_min: float = Field(default=10.0, ge=0.0)
    amplitude_max: float = Field(default=100.0, ge=0.0)
    frequency_min: float = Field(default=0.2, ge=0.0)
    frequency_max: float = Field(default=2.0, ge=0.0)
    drift: float = Field(default=20.0, ge=0.0, description="Max |linear drift| in units per second")
    noise_sigma: float = Field(default=1.0, ge=0.0)
    fps: float = Field(default=25.0, gt=0.0)

    @model_validator(mode="after")
    def validate_ranges(self):
        if self.amplitude_min > self.amplitude_max:
            raise ValueError("amplitude_min must not exceed amplitude_max")
        if self.frequency_min > self.frequency_max:
            raise ValueError("frequency_min must not exceed frequency_max")
        return self

    def value_bound(self, frames: int) -> float:
        return (self.components * self.amplitude_max
                + self.drift * frames / self.fps
                + 6.0 * self.noise_sigma)


class HorizonReport(BaseModel):
    """Metric values at requested prediction horizons"""
    metric: Metric
    horizons_ms: List[float]
    frames: List[int]
    errors: List[float]
    average: float = Field(ge=0, description="Mean over every future frame")
    samples: int = Field(ge=0)
    stage: Optional[int] = None

    def rows(self) -> List[Dict[str, object]]:
        label = "final" if self.stage is None else self.stage
        rows = [
            {"stage": label, "horizon_ms": int(h) if float(h).is_integer() else h, "value": e}
            for h, e in zip(self.horizons_ms, self.errors)
        ]
        rows.append({"stage": label, "horizon_ms": "all_frames_mean", "value": self.average})
        return rows
