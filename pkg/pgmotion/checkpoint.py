"""
Checkpoint persistence

Layout (little-endian):
    magic "PGCK", version u16
    config JSON length u32, config JSON (UTF-8, sorted keys)
    buffer count u32, then per buffer: name length u16, name, rank u8,
        extents u32 x rank, f32 payload
    Adam flag u8; when set: step u64, beta1/beta2/eps f64, then the first and
        second moment of every parameter in buffer order
    sha256 of everything above, 32 bytes
"""

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import structlog
from pydantic import ValidationError

from .exceptions import CheckpointError, CheckpointShapeError, ChecksumError, VersionMismatchError
from .models import ModelConfig, TrainConfig
from .network import ModelParams, init_model
from .tensor import DEFAULT_DTYPE
from .training import AdamState

logger = structlog.get_logger(__name__)

CHECKPOINT_MAGIC = b"PGCK"
CHECKPOINT_VERSION = 1
_DIGEST_SIZE = hashlib.sha256().digest_size

PathLike = Union[str, Path]


@dataclass
class Checkpoint:
    model: ModelParams
    train: Optional[TrainConfig] = None
    state: Optional[AdamState] = None

    @property
    def config(self) -> ModelConfig:
        return self.model.config


def _all_buffers(model: ModelParams) -> Dict[str, np.ndarray]:
    """Parameters followed by batch-norm statistics, keyed by name"""
    buffers = {name: p.value for name, p in model.named_parameters()}
    buffers.update(model.named_buffers())
    return buffers


def _pack_array(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def checkpoint_bytes(model: ModelParams, train: Optional[TrainConfig] = None,
                     state: Optional[AdamState] = None) -> bytes:
    """Serialized checkpoint including the trailing digest"""
    echo = {"model": model.config.model_dump(mode="json")}
    if train is not None:
        echo["train"] = train.model_dump(mode="json")
    config = json.dumps(echo, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(config)), config]

    buffers = _all_buffers(model)
    parts.append(struct.pack("<I", len(buffers)))
    for name, value in buffers.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape))
        parts.append(_pack_array(value))

    if state is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<BQddd", 1, state.step, state.beta1, state.beta2, state.eps))
        for _, p in model.named_parameters():
            parts.append(_pack_array(p.m))
            parts.append(_pack_array(p.v))

    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path: PathLike, model: ModelParams, train: Optional[TrainConfig] = None,
                    state: Optional[AdamState] = None) -> None:
    """Write a checkpoint file"""
    Path(path).write_bytes(checkpoint_bytes(model, train, state))
    logger.debug("checkpoint_saved", path=str(path), parameters=model.num_parameters())


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.offset = 0

    def unpack(self, fmt: str) -> Tuple:
        """struct.unpack at the cursor"""
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise CheckpointError(f"Checkpoint '{self.path}' ends early", "TRUNCATED_CHECKPOINT")
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def raw(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointError(f"Checkpoint '{self.path}' ends early", "TRUNCATED_CHECKPOINT")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def array(self, shape: Tuple[int, ...]) -> np.ndarray:
        """Read an f32 array of the given shape"""
        count = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.raw(count * 4), dtype="<f4").reshape(shape)


def _compare_config(expected: ModelConfig, found: ModelConfig) -> None:
    """Fields explicitly set on `expected` must match the checkpoint"""
    for name in sorted(expected.model_fields_set):
        want, have = getattr(expected, name), getattr(found, name)
        if want != have:
            raise CheckpointShapeError(name, want, have)


def load_checkpoint(path: PathLike, expected_config: Optional[ModelConfig] = None,
                    dtype=DEFAULT_DTYPE) -> Checkpoint:
    """Read and verify a checkpoint; raises CheckpointError subclasses on any mismatch"""
    path_str = str(path)
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"Cannot read checkpoint '{path_str}': {exc}", "MISSING_CHECKPOINT") from exc
    if len(data) < len(CHECKPOINT_MAGIC) + _DIGEST_SIZE or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"'{path_str}' is not a checkpoint", "BAD_MAGIC", {"path": path_str})
    body, digest = data[:-_DIGEST_SIZE], data[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(path_str)

    reader = _Reader(body, path_str)
    reader.raw(4)
    version, config_len = reader.unpack("<HI")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(path_str, version, CHECKPOINT_VERSION)
    try:
        echo = json.loads(reader.raw(config_len).decode("utf-8"))
        config = ModelConfig.model_validate(echo["model"])
        train = TrainConfig.model_validate(echo["train"]) if "train" in echo else None
    except (ValueError, KeyError, ValidationError) as exc:
        raise CheckpointError(f"Checkpoint '{path_str}' has an unreadable config: {exc}", "BAD_CONFIG") from exc
    if expected_config is not None:
        _compare_config(expected_config, config)

    model = init_model(config, seed=0, dtype=dtype)
    targets = _all_buffers(model)
    (count,) = reader.unpack("<I")
    if count != len(targets):
        raise CheckpointShapeError("buffer_count", len(targets), count)
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.raw(name_len).decode("utf-8")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I")
        if name not in targets:
            raise CheckpointShapeError(name, "a buffer of this model", "unknown buffer")
        if tuple(shape) != targets[name].shape:
            raise CheckpointShapeError(name, targets[name].shape, tuple(shape))
        targets[name][...] = reader.array(tuple(shape))

    state = None
    (has_state,) = reader.unpack("<B")
    if has_state:
        step, beta1, beta2, eps = reader.unpack("<Qddd")
        state = AdamState(step=step, beta1=beta1, beta2=beta2, eps=eps)
        for _, p in model.named_parameters():
            p.m[...] = reader.array(p.shape)
            p.v[...] = reader.array(p.shape)
    if reader.offset != len(body):
        raise CheckpointError(f"Checkpoint '{path_str}' has trailing data", "TRAILING_DATA")
    logger.debug("checkpoint_loaded", path=path_str, stages=config.num_stages)
    return Checkpoint(model=model, train=train, state=state)
