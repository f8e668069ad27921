"""
pgmotion Exceptions
"""

from typing import Any, Dict, Optional, Sequence


class PGMotionError(Exception):
    """Base exception for all pgmotion errors"""
    exit_code = 1

    def __init__(self, message: str, code: str = None, details: dict = None):
        self.message = message
        self.code = code or "PGMOTION_ERROR"
        self.details = details or {}
        super().__init__(self.message)


class ShapeError(PGMotionError):
    """Raised when tensor extents do not line up"""
    def __init__(self, operation: str, *shapes: Sequence[int], message: str = None):
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        message = message or f"{operation}: incompatible shapes {rendered}"
        super().__init__(message, "SHAPE_MISMATCH", {
            "operation": operation,
            "shapes": [tuple(s) for s in shapes],
        })


class ConfigError(PGMotionError):
    """Raised when a configuration value is invalid or unknown"""
    def __init__(self, field: str, message: str):
        super().__init__(f"Configuration error for '{field}': {message}", "CONFIG_ERROR", {
            "field": field,
            "validation_message": message,
        })


class DataError(PGMotionError):
    """Base class for dataset and file-format errors"""
    exit_code = 2


class CorruptHeaderError(DataError):
    """Raised when a sequence file header is unreadable"""
    def __init__(self, path: str, reason: str):
        super().__init__(f"Corrupt header in '{path}': {reason}", "CORRUPT_HEADER", {
            "path": path,
            "reason": reason,
        })


class TruncatedPayloadError(DataError):
    """Raised when a sequence file holds fewer values than its header declares"""
    def __init__(self, path: str, expected: int, actual: int):
        message = f"Truncated payload in '{path}': expected {expected} bytes, found {actual}"
        super().__init__(message, "TRUNCATED_PAYLOAD", {
            "path": path,
            "expected": expected,
            "actual": actual,
        })


class NonFiniteValueError(DataError):
    """Raised when NaN or Inf values appear in motion data"""
    def __init__(self, source: str, count: int):
        super().__init__(f"{count} non-finite value(s) in {source}", "NON_FINITE_VALUE", {
            "source": source,
            "count": count,
        })


class CsvParseError(DataError):
    """Raised when a CSV motion file cannot be parsed"""
    def __init__(self, path: str, line: int, reason: str):
        super().__init__(f"{path}:{line}: {reason}", "CSV_PARSE_ERROR", {
            "path": path,
            "line": line,
            "reason": reason,
        })


class DatasetShapeError(DataError):
    """Raised when dataset windows do not fit the model's (T_h, T_f, M, D)"""
    def __init__(self, expected: Sequence[int], found: Sequence[int]):
        message = f"Dataset windows (T_h, T_f, M, D)={tuple(found)} do not match model {tuple(expected)}"
        super().__init__(message, "DATASET_SHAPE_MISMATCH", {
            "expected": tuple(expected),
            "found": tuple(found),
        })


class EmptyDatasetError(DataError):
    """Raised when there is nothing to evaluate"""
    def __init__(self, operation: str):
        super().__init__(f"{operation}: no evaluation windows", "EMPTY_DATASET", {"operation": operation})


class CheckpointError(PGMotionError):
    """Base class for checkpoint persistence errors"""
    exit_code = 2


class ChecksumError(CheckpointError):
    """Raised when checkpoint content does not match its checksum"""
    def __init__(self, path: str):
        super().__init__(f"Checksum mismatch in checkpoint '{path}'", "CHECKSUM_MISMATCH", {"path": path})


class VersionMismatchError(CheckpointError):
    """Raised when a checkpoint was written by an unsupported format version"""
    def __init__(self, path: str, found: int, supported: int):
        message = f"Checkpoint '{path}' has format version {found}, expected {supported}"
        super().__init__(message, "VERSION_MISMATCH", {
            "path": path,
            "found": found,
            "supported": supported,
        })


class CheckpointShapeError(CheckpointError):
    """Raised when checkpoint buffers or config disagree with what is requested"""
    def __init__(self, field: str, expected: Any, found: Any):
        message = f"Checkpoint field '{field}' mismatch: expected {expected}, found {found}"
        super().__init__(message, "CHECKPOINT_SHAPE_MISMATCH", {
            "field": field,
            "expected": expected,
            "found": found,
        })


class HorizonError(PGMotionError):
    """Raised when a horizon does not map onto an integer future frame"""
    def __init__(self, horizon_ms: float, fps: float, reason: str):
        super().__init__(f"Horizon {horizon_ms}ms at {fps}fps: {reason}", "HORIZON_ERROR", {
            "horizon_ms": horizon_ms,
            "fps": fps,
        })


class NumericalError(PGMotionError):
    """Raised when training produces a non-finite loss"""
    exit_code = 3

    def __init__(self, epoch: int, batch: int, value: float, details: Optional[Dict[str, Any]] = None):
        message = f"Non-finite loss {value} at epoch {epoch}, batch {batch}"
        super().__init__(message, "NON_FINITE_LOSS", {
            "epoch": epoch,
            "batch": batch,
            "value": value,
            **(details or {}),
        })
