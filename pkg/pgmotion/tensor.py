"""
Dense tensor kernels

Tensors are numpy arrays laid out as (batch, frames, joints, features).
Every kernel checks extents exactly and never broadcasts; the dtype of the
inputs is the precision of the result (float32 for training, float64 for
gradient checking).
"""

from typing import Sequence

import numpy as np

from .exceptions import ShapeError

DEFAULT_DTYPE = np.float32
GRADCHECK_DTYPE = np.float64


def as_tensor(data, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Copy data into a contiguous tensor of the requested precision"""
    out = np.array(data, dtype=dtype, copy=True, order="C")
    if out.ndim == 0 or out.ndim > 4:
        raise ShapeError("as_tensor", out.shape, message=f"as_tensor: rank {out.ndim} outside 1..4")
    if any(extent < 1 for extent in out.shape):
        raise ShapeError("as_tensor", out.shape, message=f"as_tensor: empty extent in {out.shape}")
    return out


def _require_rank(operation: str, x: np.ndarray, rank: int) -> None:
    if x.ndim != rank:
        raise ShapeError(operation, x.shape, message=f"{operation}: expected rank {rank}, got shape {x.shape}")


def matmul_left(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """out[..., :, :] = a @ x[..., :, :] for a square N x N matrix a"""
    if a.ndim != 2 or a.shape[0] != a.shape[1] or x.ndim < 2 or x.shape[-2] != a.shape[0]:
        raise ShapeError("matmul_left", a.shape, x.shape)
    return np.matmul(a, x)


def matmul_right(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """out[..., :, :] = x[..., :, :] @ w"""
    if w.ndim != 2 or x.ndim < 2 or x.shape[-1] != w.shape[0] or w.shape[1] < 1:
        raise ShapeError("matmul_right", x.shape, w.shape)
    return np.matmul(x, w)


def transpose_frames_joints(x: np.ndarray) -> np.ndarray:
    """Swap the frame and joint axes: (B, L, M, F) -> (B, M, L, F)"""
    _require_rank("transpose_frames_joints", x, 4)
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3))


def concat_along(x: np.ndarray, y: np.ndarray, axis: int) -> np.ndarray:
    """Append y after x along one axis of two rank-4 tensors"""
    _require_rank("concat", x, 4)
    _require_rank("concat", y, 4)
    for dim in range(4):
        if dim != axis and x.shape[dim] != y.shape[dim]:
            raise ShapeError("concat", x.shape, y.shape)
    return np.concatenate([x, y], axis=axis)


def concat_frames(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Append y's frames after x's frames"""
    return concat_along(x, y, axis=1)


def sum_over_leading(x: np.ndarray, keep: int) -> np.ndarray:
    """Sum all but the trailing `keep` axes"""
    return x.sum(axis=tuple(range(x.ndim - keep)))


def check_finite(x: np.ndarray) -> int:
    """Number of NaN/Inf entries"""
    return int(x.size - np.count_nonzero(np.isfinite(x)))


def same_shape(operation: str, *tensors: np.ndarray) -> Sequence[int]:
    first = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != first:
            raise ShapeError(operation, first, t.shape)
    return first
