"""
Evaluation metrics

MPJPE for joint positions and MAE for angles, both evaluated on future frames
(N, T_f, M, D). Frame indices are 1-based: frame k lies k / fps seconds after
the last observed pose.
"""

import math
from typing import List, Sequence

import numpy as np

from .exceptions import EmptyDatasetError, HorizonError, ShapeError
from .models import HorizonReport, Metric


def _check_pair(operation: str, pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape or pred.ndim != 4:
        raise ShapeError(operation, pred.shape, gt.shape)


def _check_frame(operation: str, t_f: int, frame_index: int) -> None:
    if not 1 <= frame_index <= t_f:
        raise ShapeError(operation, (t_f,), message=f"{operation}: frame {frame_index} outside [1, {t_f}]")


def per_frame_errors(pred: np.ndarray, gt: np.ndarray, metric: Metric = Metric.MPJPE) -> np.ndarray:
    """Metric value for every future frame, shape (T_f,)"""
    _check_pair("per_frame_errors", pred, gt)
    diff = pred.astype(np.float64) - gt.astype(np.float64)
    if Metric(metric) == Metric.MPJPE:
        return np.linalg.norm(diff, axis=-1).mean(axis=(0, 2))
    return np.abs(diff).mean(axis=(0, 2, 3))


def mpjpe_at(pred: np.ndarray, gt: np.ndarray, frame_index: int) -> float:
    _check_pair("mpjpe_at", pred, gt)
    _check_frame("mpjpe_at", pred.shape[1], frame_index)
    diff = pred[:, frame_index - 1].astype(np.float64) - gt[:, frame_index - 1].astype(np.float64)
    return float(np.linalg.norm(diff, axis=-1).mean())


def mae_at(pred: np.ndarray, gt: np.ndarray, frame_index: int) -> float:
    _check_pair("mae_at", pred, gt)
    _check_frame("mae_at", pred.shape[1], frame_index)
    diff = pred[:, frame_index - 1].astype(np.float64) - gt[:, frame_index - 1].astype(np.float64)
    return float(np.abs(diff).mean())


def per_joint_mpjpe(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Mean position error of every joint over samples and future frames, shape (M,)"""
    _check_pair("per_joint_mpjpe", pred, gt)
    diff = pred.astype(np.float64) - gt.astype(np.float64)
    return np.linalg.norm(diff, axis=-1).mean(axis=(0, 1))


def horizon_to_frame(horizon_ms: float, fps: float, t_f: int = None) -> int:
    """Exact millisecond -> future frame conversion; rounding is an error"""
    frames = horizon_ms * fps / 1000.0
    nearest = round(frames)
    if nearest < 1 or not math.isclose(frames, nearest, rel_tol=0.0, abs_tol=1e-9):
        raise HorizonError(horizon_ms, fps, f"{frames:g} frames is not a positive integer")
    if t_f is not None and nearest > t_f:
        raise HorizonError(horizon_ms, fps, f"frame {nearest} beyond the {t_f} predicted frames")
    return int(nearest)


def usable_horizons(horizons_ms: Sequence[float], fps: float, t_f: int) -> List[float]:
    """Horizons that map exactly onto a predicted frame"""
    usable = []
    for h in horizons_ms:
        try:
            horizon_to_frame(h, fps, t_f)
        except HorizonError:
            continue
        usable.append(h)
    return usable


def horizon_report(pred: np.ndarray, gt: np.ndarray, horizons_ms: Sequence[float], fps: float,
                   metric: Metric = Metric.MPJPE, stage: int = None) -> HorizonReport:
    """Metric at each horizon plus the mean over every future frame"""
    _check_pair("horizon_report", pred, gt)
    if pred.shape[0] == 0:
        raise EmptyDatasetError("horizon_report")
    metric = Metric(metric)
    t_f = pred.shape[1]
    frames = [horizon_to_frame(h, fps, t_f) for h in horizons_ms]
    curve = per_frame_errors(pred, gt, metric)
    return HorizonReport(
        metric=metric,
        horizons_ms=[float(h) for h in horizons_ms],
        frames=frames,
        errors=[float(curve[k - 1]) for k in frames],
        average=float(curve.mean()),
        samples=int(pred.shape[0]),
        stage=stage,
    )
