"""
Intermediate targets

Accumulated average smoothing (cumulative mean of the future segment, history
untouched) applied recursively to the ground truth yields one supervision
sequence per stage. Gaussian smoothing and Mean-x padding are the baselines it
is compared against.
"""

from dataclasses import dataclass
from typing import List

import numpy as np

from .exceptions import ConfigError, ShapeError
from .models import Supervision, TrainConfig
from .sequence import MotionSequence
from .tensor import concat_frames


@dataclass
class StageTargets:
    """S^1 ... S^T, coarsest first; the last entry is the ground truth"""
    sequences: List[MotionSequence]
    t_h: int

    def __len__(self) -> int:
        return len(self.sequences)

    def __getitem__(self, index: int) -> MotionSequence:
        return self.sequences[index]


def _check_split(t_h: int, length: int) -> None:
    if not 1 <= t_h < length:
        raise ConfigError("t_h", f"history length {t_h} must satisfy 1 <= t_h < {length}")


def aas_frames(frames: np.ndarray, t_h: int, axis: int = 0) -> np.ndarray:
    """Cumulative mean of the future part along `axis`; the first t_h entries are kept"""
    _check_split(t_h, frames.shape[axis])
    history, future = np.split(frames, [t_h], axis=axis)
    shape = [1] * frames.ndim
    shape[axis] = future.shape[axis]
    counts = np.arange(1, future.shape[axis] + 1, dtype=frames.dtype).reshape(shape)
    smoothed = np.cumsum(future, axis=axis) / counts
    return np.concatenate([history, smoothed.astype(frames.dtype, copy=False)], axis=axis)


def aas_once(s: MotionSequence, t_h: int) -> MotionSequence:
    """One smoothing pass over the future of a sequence"""
    return s.with_frames(aas_frames(s.frames, t_h))


def build_stage_targets(gt: MotionSequence, t_h: int, stages: int) -> StageTargets:
    """S^T = gt, S^i = AAS(S^{i+1})"""
    if stages < 1:
        raise ConfigError("num_stages", "must be at least 1")
    sequences = [gt]
    for _ in range(stages - 1):
        sequences.insert(0, aas_once(sequences[0], t_h))
    return StageTargets(sequences=sequences, t_h=t_h)


def gaussian_kernel(window: int) -> np.ndarray:
    """Normalized Gaussian weights, sigma chosen so the window spans +-3 sigma"""
    if window < 3 or window % 2 == 0:
        raise ConfigError("gaussian_window", f"window must be odd and >= 3, got {window}")
    sigma = (window - 1) / 6.0
    offsets = np.arange(window, dtype=np.float64) - (window - 1) / 2
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    return kernel / kernel.sum()


def _gaussian_segment(segment: np.ndarray, window: int, axis: int) -> np.ndarray:
    kernel = gaussian_kernel(window)
    radius = window // 2
    pad = [(0, 0)] * segment.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(segment, pad, mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, window, axis=axis)
    return (windows @ kernel).astype(segment.dtype, copy=False)


def gaussian_frames(frames: np.ndarray, t_h: int, window: int, future_only: bool = True,
                    axis: int = 0) -> np.ndarray:
    """Gaussian smoothing of the future, or of the whole sequence"""
    if not future_only:
        return _gaussian_segment(frames, window, axis)
    _check_split(t_h, frames.shape[axis])
    history, future = np.split(frames, [t_h], axis=axis)
    return np.concatenate([history, _gaussian_segment(future, window, axis)], axis=axis)


def gaussian_smooth(s: MotionSequence, t_h: int, window: int = 21, apply_to: str = "future-only") -> MotionSequence:
    if apply_to not in ("future-only", "full"):
        raise ConfigError("apply_to", f"expected 'future-only' or 'full', got '{apply_to}'")
    return s.with_frames(gaussian_frames(s.frames, t_h, window, future_only=apply_to == "future-only"))


def mean_x_future(future: np.ndarray, x: int, axis: int = 0) -> np.ndarray:
    """Mean of the first x future poses, repeated over the whole future"""
    t_f = future.shape[axis]
    if not 1 <= x <= t_f:
        raise ConfigError("mean_x", f"x={x} outside [1, {t_f}]")
    head = np.take(future, np.arange(x), axis=axis)
    mean = head.mean(axis=axis, keepdims=True).astype(future.dtype, copy=False)
    return np.repeat(mean, t_f, axis=axis)


def mean_x_pad(obs: MotionSequence, future_gt: MotionSequence, x: int) -> MotionSequence:
    """History followed by T_f copies of the mean of the first x ground-truth future poses"""
    if obs.frames.shape[1:] != future_gt.frames.shape[1:]:
        raise ShapeError("mean_x_pad", obs.frames.shape, future_gt.frames.shape)
    pad = mean_x_future(future_gt.frames, x)
    return obs.with_frames(np.concatenate([obs.frames, pad], axis=0))


def build_target_batch(obs: np.ndarray, future: np.ndarray, stages: int, cfg: TrainConfig) -> List[np.ndarray]:
    """Per-stage supervision for a batch, coarsest first

    obs is (B, T_h, M, D) and future (B, T_f, M, D). The last entry is always
    the ground truth. Under `none` the intermediate entries are still the
    ground truth; `stage_weights` zeroes their loss.
    """
    t_h = obs.shape[1]
    gt = concat_frames(obs, future)
    targets = [gt]
    kind = Supervision(cfg.intermediate_supervision)
    for _ in range(stages - 1):
        if kind == Supervision.AAS:
            nxt = aas_frames(targets[0], t_h, axis=1)
        elif kind == Supervision.GAUSSIAN:
            nxt = gaussian_frames(targets[0], t_h, cfg.gaussian_window, axis=1)
        elif kind == Supervision.MEAN_X:
            nxt = concat_frames(obs, mean_x_future(future, min(cfg.target_mean_x, future.shape[1]), axis=1))
        else:
            nxt = gt
        targets.insert(0, nxt)
    return targets


def stage_weights(supervision: Supervision, stages: int) -> List[float]:
    if Supervision(supervision) == Supervision.NONE:
        return [0.0] * (stages - 1) + [1.0]
    return [1.0] * stages


def total_variation(frames: np.ndarray, t_h: int) -> float:
    """Sum over trajectories of |x^{k+1} - x^k| across the future segment"""
    future = frames[t_h:]
    return float(np.abs(np.diff(future, axis=0)).sum())
