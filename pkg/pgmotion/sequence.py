"""
Motion sequence value type
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import NonFiniteValueError, ShapeError
from .tensor import check_finite


@dataclass(frozen=True, eq=False)
class MotionSequence:
    """L poses of M joints x D coordinates sampled at `fps`"""
    frames: np.ndarray
    fps: float = 25.0

    def __post_init__(self):
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise ShapeError("MotionSequence", self.frames.shape,
                             message=f"MotionSequence: expected (L>=1, M, D), got {self.frames.shape}")
        bad = check_finite(self.frames)
        if bad:
            raise NonFiniteValueError("motion sequence", bad)
        # files store fps as f32
        object.__setattr__(self, "fps", float(np.float32(self.fps)))

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def joints(self) -> int:
        return self.frames.shape[1]

    @property
    def dims(self) -> int:
        return self.frames.shape[2]

    def with_frames(self, frames: np.ndarray) -> "MotionSequence":
        return MotionSequence(frames=frames, fps=self.fps)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MotionSequence):
            return NotImplemented
        return (self.fps == other.fps
                and self.frames.dtype == other.frames.dtype
                and np.array_equal(self.frames, other.frames))
