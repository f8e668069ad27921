"""
Motion data persistence, windowing and synthetic generation

Sequence file layout (little-endian):
    magic  "PGMP"      4 bytes
    version            u16
    fps                f32
    L, M, D            u32 x 3
    payload            L*M*D f32, (frame, joint, coordinate) order
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, Field

from .exceptions import (
    ConfigError,
    CorruptHeaderError,
    CsvParseError,
    DataError,
    NonFiniteValueError,
    ShapeError,
    TruncatedPayloadError,
)
from .models import SynthParams
from .sequence import MotionSequence
from .tensor import check_finite

logger = structlog.get_logger(__name__)

SEQUENCE_MAGIC = b"PGMP"
SEQUENCE_VERSION = 1
_HEADER = struct.Struct("<4sHfIII")

PathLike = Union[str, Path]


# ---------------------------------------------------------------------------
# Binary sequence files
# ---------------------------------------------------------------------------

def save_sequence(s: MotionSequence, path: PathLike) -> None:
    """Write a .pgmp sequence file"""
    bad = check_finite(s.frames)
    if bad:
        raise NonFiniteValueError(str(path), bad)
    length, joints, dims = s.frames.shape
    header = _HEADER.pack(SEQUENCE_MAGIC, SEQUENCE_VERSION, s.fps, length, joints, dims)
    payload = np.ascontiguousarray(s.frames, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def load_sequence(path: PathLike) -> MotionSequence:
    """Read a .pgmp sequence file, validating header, size and values"""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CorruptHeaderError(str(path), f"file holds {len(raw)} bytes, header needs {_HEADER.size}")
    magic, version, fps, length, joints, dims = _HEADER.unpack_from(raw)
    if magic != SEQUENCE_MAGIC:
        raise CorruptHeaderError(str(path), f"bad magic {magic!r}")
    if version != SEQUENCE_VERSION:
        raise CorruptHeaderError(str(path), f"unsupported version {version}")
    if min(length, joints, dims) < 1 or not np.isfinite(fps) or fps <= 0:
        raise CorruptHeaderError(str(path), f"invalid extents L={length} M={joints} D={dims} fps={fps}")
    expected = length * joints * dims * 4
    payload = raw[_HEADER.size:]
    if len(payload) < expected:
        raise TruncatedPayloadError(str(path), expected, len(payload))
    if len(payload) > expected:
        raise CorruptHeaderError(str(path), f"{len(payload) - expected} trailing bytes after payload")
    frames = np.frombuffer(payload, dtype="<f4").reshape(length, joints, dims).astype(np.float32)
    bad = check_finite(frames)
    if bad:
        raise NonFiniteValueError(str(path), bad)
    return MotionSequence(frames=frames, fps=float(fps))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def import_csv(path: PathLike, fps: float, joints: int, dims: int) -> MotionSequence:
    """One frame per row, M*D comma-separated numeric columns, no header"""
    columns = joints * dims
    try:
        table = pd.read_csv(path, header=None, dtype=str, skip_blank_lines=True, keep_default_na=False)
    except pd.errors.ParserError as exc:
        raise CsvParseError(str(path), _parser_error_line(exc), f"ragged row: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise CsvParseError(str(path), 1, "no rows") from exc
    if table.shape[1] != columns:
        raise CsvParseError(str(path), 1, f"expected {columns} columns (M={joints} x D={dims}), found {table.shape[1]}")
    for row_index, row in enumerate(table.itertuples(index=False), start=1):
        for cell in row:
            if cell is None or (isinstance(cell, float) and np.isnan(cell)) or str(cell).strip() == "":
                raise CsvParseError(str(path), row_index, f"ragged row: expected {columns} cells")
    numeric = table.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().to_numpy()
    if bad.any():
        row, col = (int(v) for v in np.argwhere(bad)[0])
        raise CsvParseError(str(path), row + 1, f"non-numeric cell '{table.iat[row, col]}' in column {col + 1}")
    frames = numeric.to_numpy(dtype=np.float64).astype(np.float32).reshape(-1, joints, dims)
    bad_count = check_finite(frames)
    if bad_count:
        raise NonFiniteValueError(str(path), bad_count)
    return MotionSequence(frames=frames, fps=fps)


def _parser_error_line(exc: Exception) -> int:
    # pandas reports "Expected 3 fields in line 4, saw 5"
    words = str(exc).replace(",", " ").split()
    for i, word in enumerate(words[:-1]):
        if word == "line" and words[i + 1].isdigit():
            return int(words[i + 1])
    return 0


def export_csv(s: MotionSequence, path: PathLike) -> None:
    """One row per frame, M*D columns, no header"""
    flat = s.frames.reshape(s.length, -1)
    pd.DataFrame(flat).to_csv(path, header=False, index=False, float_format="%.9g")


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------

@dataclass
class WindowedDataset:
    """(observed, future) pairs cut from one or more sequences"""
    observed: np.ndarray
    future: np.ndarray
    provenance: List[Tuple[str, int]] = field(default_factory=list)
    fps: float = 25.0
    too_short: bool = False

    def __post_init__(self):
        if self.observed.ndim != 4 or self.future.ndim != 4:
            raise ShapeError("WindowedDataset", self.observed.shape, self.future.shape)
        if (self.observed.shape[0] != self.future.shape[0]
                or self.observed.shape[2:] != self.future.shape[2:]):
            raise ShapeError("WindowedDataset", self.observed.shape, self.future.shape)

    def __len__(self) -> int:
        return self.observed.shape[0]

    @property
    def t_h(self) -> int:
        return self.observed.shape[1]

    @property
    def t_f(self) -> int:
        return self.future.shape[1]

    @property
    def joints(self) -> int:
        return self.observed.shape[2]

    @property
    def dims(self) -> int:
        return self.observed.shape[3]

    def batch(self, indices: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        """Observed and future arrays for the given window indices"""
        idx = np.asarray(indices, dtype=np.int64)
        return self.observed[idx], self.future[idx]

    def subset(self, indices: Sequence[int]) -> "WindowedDataset":
        """Windows at the given indices, provenance kept"""
        idx = np.asarray(indices, dtype=np.int64)
        return WindowedDataset(self.observed[idx], self.future[idx],
                               [self.provenance[i] for i in idx] if self.provenance else [],
                               self.fps)

    @classmethod
    def empty(cls, t_h: int, t_f: int, joints: int, dims: int, fps: float = 25.0) -> "WindowedDataset":
        """Zero windows with the given extents"""
        return cls(np.zeros((0, t_h, joints, dims), np.float32), np.zeros((0, t_f, joints, dims), np.float32),
                   [], fps, too_short=True)

    @classmethod
    def concatenate(cls, parts: Sequence["WindowedDataset"]) -> "WindowedDataset":
        """Stack windows; all parts must share extents"""
        if not parts:
            raise DataError("cannot concatenate zero datasets", "EMPTY_DATASET")
        return cls(
            np.concatenate([p.observed for p in parts]),
            np.concatenate([p.future for p in parts]),
            [entry for p in parts for entry in p.provenance],
            parts[0].fps,
            too_short=all(p.too_short for p in parts),
        )


def sliding_windows(s: MotionSequence, t_h: int, t_f: int, stride: int = 1,
                    source: str = "") -> WindowedDataset:
    """Every (T_h, T_f) window starting at multiples of stride"""
    if stride < 1:
        raise ConfigError("stride", "must be at least 1")
    span = t_h + t_f
    if s.length < span:
        logger.debug("sequence_too_short", source=source, length=s.length, needed=span)
        return WindowedDataset.empty(t_h, t_f, s.joints, s.dims, s.fps)
    offsets = list(range(0, s.length - span + 1, stride))
    windows = np.stack([s.frames[o:o + span] for o in offsets])
    return WindowedDataset(
        observed=np.ascontiguousarray(windows[:, :t_h]),
        future=np.ascontiguousarray(windows[:, t_h:]),
        provenance=[(source, o) for o in offsets],
        fps=s.fps,
    )


def windows_from_sequences(sequences: Sequence[MotionSequence], t_h: int, t_f: int, stride: int = 1,
                           sources: Optional[Sequence[str]] = None) -> WindowedDataset:
    """Windows of every sequence; sequences too short to window are skipped"""
    sources = sources or [f"seq{i}" for i in range(len(sequences))]
    parts = [sliding_windows(s, t_h, t_f, stride, src) for s, src in zip(sequences, sources)]
    parts = [p for p in parts if len(p)] or parts
    if not parts:
        raise DataError("no sequences to window", "EMPTY_DATASET")
    return WindowedDataset.concatenate(parts)


def downsample(s: MotionSequence, factor: int) -> MotionSequence:
    """Keep every factor-th frame starting at the first"""
    if factor < 1:
        raise ConfigError("factor", "must be a positive integer")
    return MotionSequence(frames=np.ascontiguousarray(s.frames[::factor]), fps=s.fps / factor)


# ---------------------------------------------------------------------------
# Synthetic motion
# ---------------------------------------------------------------------------

def synth_motion(seed: int, n_sequences: int, length: int, joints: int, dims: int,
                 params: SynthParams = None) -> List[MotionSequence]:
    """Each coordinate: K sinusoids + linear drift + clipped Gaussian noise"""
    params = params or SynthParams()
    if n_sequences < 0 or length < 1 or joints < 1 or dims < 1:
        raise ConfigError("synth", f"invalid extents n={n_sequences} L={length} M={joints} D={dims}")
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64) / params.fps
    sequences = []
    shape = (joints, dims, params.components)
    for _ in range(n_sequences):
        amplitude = rng.uniform(params.amplitude_min, params.amplitude_max, size=shape)
        frequency = rng.uniform(params.frequency_min, params.frequency_max, size=shape)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=shape)
        drift = rng.uniform(-params.drift, params.drift, size=(joints, dims))
        waves = amplitude * np.sin(2.0 * np.pi * frequency * t[:, None, None, None] + phase)
        frames = waves.sum(axis=-1) + drift * t[:, None, None]
        if params.noise_sigma > 0:
            noise = rng.normal(0.0, params.noise_sigma, size=frames.shape)
            frames = frames + np.clip(noise, -6.0 * params.noise_sigma, 6.0 * params.noise_sigma)
        sequences.append(MotionSequence(frames=frames.astype(np.float32), fps=params.fps))
    return sequences


class SplitManifest(BaseModel):
    """Sequence files of a synthetic corpus and their split assignment"""
    seed: int
    fps: float
    frames: int
    joints: int
    dims: int
    splits: Dict[str, List[str]] = Field(default_factory=dict)


def split_indices(n: int, seed: int, fractions: Tuple[float, float, float] = (0.7, 0.15, 0.15)) -> Dict[str, List[int]]:
    """Seeded by-sequence train/val/test assignment"""
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return {
        "train": sorted(int(i) for i in order[:n_train]),
        "val": sorted(int(i) for i in order[n_train:n_train + n_val]),
        "test": sorted(int(i) for i in order[n_train + n_val:]),
    }


def write_corpus(sequences: Sequence[MotionSequence], out_dir: PathLike, seed: int) -> SplitManifest:
    """seq_NNNN.pgmp files plus manifest.json with the split assignment"""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"Cannot create output directory '{out}': {exc}", "UNWRITABLE_OUTPUT") from exc
    names = [f"seq_{i:04d}.pgmp" for i in range(len(sequences))]
    for name, s in zip(names, sequences):
        save_sequence(s, out / name)
    first = sequences[0] if sequences else None
    manifest = SplitManifest(
        seed=seed,
        fps=first.fps if first else 0.0,
        frames=first.length if first else 0,
        joints=first.joints if first else 0,
        dims=first.dims if first else 0,
        splits={k: [names[i] for i in v] for k, v in split_indices(len(sequences), seed).items()},
    )
    (out / "manifest.json").write_text(json.dumps(manifest.model_dump(), indent=2, sort_keys=True) + "\n")
    logger.info("corpus_written", path=str(out), sequences=len(sequences))
    return manifest


def load_manifest(path: PathLike) -> Tuple[SplitManifest, Path]:
    """Manifest and the directory its files live in"""
    path = Path(path)
    manifest_file = path / "manifest.json" if path.is_dir() else path
    try:
        manifest = SplitManifest.model_validate_json(manifest_file.read_text())
    except OSError as exc:
        raise DataError(f"Cannot read manifest '{manifest_file}': {exc}", "MISSING_DATA") from exc
    return manifest, manifest_file.parent


def load_split(path: PathLike, split: str, t_h: int, t_f: int, stride: int = 1) -> WindowedDataset:
    """Windows of one manifest split"""
    manifest, root = load_manifest(path)
    if split not in manifest.splits:
        raise DataError(f"Split '{split}' not in manifest", "MISSING_SPLIT", {"split": split})
    names = manifest.splits[split]
    sequences = [load_sequence(root / name) for name in names]
    if not sequences:
        return WindowedDataset.empty(t_h, t_f, manifest.joints, manifest.dims, manifest.fps)
    return windows_from_sequences(sequences, t_h, t_f, stride, names)
