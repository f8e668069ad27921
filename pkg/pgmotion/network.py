"""
Encoder-Copy-Decoder stage network and the T-stage progressive framework

Stage i receives the observed history followed by an initial guess of the
future (the repeated last pose for stage 1, the future half of stage i-1's
output afterwards) and returns a refined full-length sequence.
"""

import copy
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np
import structlog

from .exceptions import ConfigError, ShapeError
from .layers import (
    DenseGraphLayerParams,
    GcbCache,
    GcbParams,
    GclCache,
    GclParams,
    Parameter,
    gcb_backward,
    gcb_forward,
    gcl_backward,
    gcl_forward,
    init_dense_graph_layer,
    init_gcb,
    init_gcl,
    pointwise_linear,
    pointwise_linear_backward,
    sdgcn_backward,
    sdgcn_forward,
    tdgcn_backward,
    tdgcn_forward,
    xavier_uniform,
)
from .models import CopyAxis, Mode, ModelConfig
from .sequence import MotionSequence
from .tensor import DEFAULT_DTYPE, concat_along, concat_frames

logger = structlog.get_logger(__name__)

_COPY_AXES = {CopyAxis.TEMPORAL: 1, CopyAxis.SPATIAL: 2, CopyAxis.CHANNEL: 3}


@dataclass(eq=False)
class StageParams:
    """Parameters of one Encoder-Copy-Decoder network"""
    enc_in_gcl: GclParams
    enc_gcbs: List[GcbParams]
    enc_proj: Parameter
    dec_gcbs: List[GcbParams]
    dec_out_sdgcn: DenseGraphLayerParams
    dec_out_tdgcn: DenseGraphLayerParams
    dec_proj: Parameter

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Parameter]]:
        yield from self.enc_in_gcl.named_parameters(f"{prefix}.enc_in_gcl")
        for i, gcb in enumerate(self.enc_gcbs):
            yield from gcb.named_parameters(f"{prefix}.enc_gcbs.{i}")
        yield f"{prefix}.enc_proj.weight", self.enc_proj
        for i, gcb in enumerate(self.dec_gcbs):
            yield from gcb.named_parameters(f"{prefix}.dec_gcbs.{i}")
        yield from self.dec_out_sdgcn.named_parameters(f"{prefix}.dec_out_sdgcn")
        yield from self.dec_out_tdgcn.named_parameters(f"{prefix}.dec_out_tdgcn")
        yield f"{prefix}.dec_proj.weight", self.dec_proj

    def named_buffers(self, prefix: str) -> Iterator[Tuple[str, np.ndarray]]:
        yield from self.enc_in_gcl.named_buffers(f"{prefix}.enc_in_gcl")
        for i, gcb in enumerate(self.enc_gcbs):
            yield from gcb.named_buffers(f"{prefix}.enc_gcbs.{i}")
        for i, gcb in enumerate(self.dec_gcbs):
            yield from gcb.named_buffers(f"{prefix}.dec_gcbs.{i}")

    def gcls(self) -> Iterator[GclParams]:
        yield self.enc_in_gcl
        for gcb in self.enc_gcbs + self.dec_gcbs:
            yield gcb.first
            yield gcb.second


@dataclass(eq=False)
class ModelParams:
    """All T stages; with share_weights every entry is the same StageParams"""
    config: ModelConfig
    stages: List[StageParams]

    def __post_init__(self):
        if len(self.stages) != self.config.num_stages:
            raise ShapeError("ModelParams", (len(self.stages),), (self.config.num_stages,),
                             message=f"{len(self.stages)} stages for num_stages={self.config.num_stages}")

    def unique_stages(self) -> Iterator[Tuple[int, StageParams]]:
        seen = set()
        for i, stage in enumerate(self.stages):
            if id(stage) not in seen:
                seen.add(id(stage))
                yield i, stage

    def named_parameters(self) -> Iterator[Tuple[str, Parameter]]:
        for i, stage in self.unique_stages():
            yield from stage.named_parameters(f"stage{i}")

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        for i, stage in self.unique_stages():
            yield from stage.named_buffers(f"stage{i}")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    @property
    def dtype(self):
        return self.stages[0].enc_proj.value.dtype

    def astype(self, dtype) -> "ModelParams":
        """Deep copy with every buffer cast to dtype"""
        clone = copy.deepcopy(self)
        for p in clone.parameters():
            p.cast_(dtype)
        for _, stage in clone.unique_stages():
            for gcl in stage.gcls():
                gcl.bn.cast_(dtype)
        return clone


# ---------------------------------------------------------------------------
# Construction and parameter counting
# ---------------------------------------------------------------------------

def init_stage(config: ModelConfig, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> StageParams:
    m, l, d, f = config.joints, config.seq_len, config.dims, config.features
    dm, dl, df = config.decoder_joints, config.decoder_frames, config.decoder_features
    common = dict(dropout_rate=config.dropout_rate, scheme=config.adjacency_init,
                  eps=config.bn_eps, momentum=config.bn_momentum)
    enc_in_gcl = init_gcl(m, l, d, f, rng, dtype, **common)
    enc_gcbs = [init_gcb(m, l, f, rng, dtype, **common) for _ in range(config.encoder_gcbs)]
    enc_proj = Parameter(xavier_uniform(d, f, rng, dtype))
    dec_gcbs = [init_gcb(dm, dl, df, rng, dtype, **common) for _ in range(config.decoder_gcbs)]
    dec_out_sdgcn = init_dense_graph_layer(dm, df, d, rng, dtype, config.adjacency_init)
    dec_out_tdgcn = init_dense_graph_layer(dl, d, d, rng, dtype, config.adjacency_init)
    dec_proj = Parameter(xavier_uniform(df, d, rng, dtype))
    return StageParams(enc_in_gcl, enc_gcbs, enc_proj, dec_gcbs, dec_out_sdgcn, dec_out_tdgcn, dec_proj)


def init_model(config: ModelConfig, seed: int = 0, dtype=DEFAULT_DTYPE) -> ModelParams:
    rng = np.random.default_rng(seed)
    if config.share_weights:
        shared = init_stage(config, rng, dtype)
        stages = [shared] * config.num_stages
    else:
        stages = [init_stage(config, rng, dtype) for _ in range(config.num_stages)]
    model = ModelParams(config=config, stages=stages)
    logger.debug("model_initialized", stages=config.num_stages, parameters=model.num_parameters(),
                 dtype=np.dtype(dtype).name)
    return model


def count_parameters(config: ModelConfig) -> int:
    """Closed-form learnable parameter count for a config"""
    def dense(nodes, f_in, f_out):
        return nodes * nodes + f_in * f_out

    def gcl(joints, frames, f_in, f_out):
        return dense(joints, f_in, f_out) + dense(frames, f_out, f_out) + 2 * f_out

    m, l, d, f = config.joints, config.seq_len, config.dims, config.features
    dm, dl, df = config.decoder_joints, config.decoder_frames, config.decoder_features
    encoder = gcl(m, l, d, f) + config.encoder_gcbs * 2 * gcl(m, l, f, f) + d * f
    decoder = config.decoder_gcbs * 2 * gcl(dm, dl, df, df) + dense(dm, df, d) + dense(dl, d, d) + df * d
    stages = 1 if config.share_weights else config.num_stages
    return stages * (encoder + decoder)


# ---------------------------------------------------------------------------
# Input assembly
# ---------------------------------------------------------------------------

def pad_with_last_pose(obs: MotionSequence, t_f: int) -> MotionSequence:
    """Append T_f copies of the last observed pose"""
    if t_f < 1:
        raise ConfigError("t_f", "must be at least 1")
    padded = pad_batch_with_last_pose(obs.frames[None], t_f)[0]
    return obs.with_frames(padded)


def pad_batch_with_last_pose(obs: np.ndarray, t_f: int) -> np.ndarray:
    """(B, T_h, M, D) -> (B, T_h + T_f, M, D)"""
    if obs.ndim != 4 or obs.shape[1] < 1:
        raise ShapeError("pad_with_last_pose", obs.shape, message=f"empty or malformed observation {obs.shape}")
    last = np.repeat(obs[:, -1:], t_f, axis=1)
    return concat_frames(obs, last)


def copy_features(x: np.ndarray, count: int, axis: CopyAxis) -> np.ndarray:
    """Append `count` copies of the feature map along the chosen axis"""
    axis = CopyAxis(axis)
    allowed = (0, 1, 3) if axis == CopyAxis.TEMPORAL else (0, 1)
    if count not in allowed:
        raise ConfigError("copy_count", f"{count} unsupported along {axis.value} axis")
    out = x
    for _ in range(count):
        out = concat_along(out, x, _COPY_AXES[axis])
    return out


def _copy_backward(grad: np.ndarray, count: int, axis: CopyAxis) -> np.ndarray:
    pieces = np.split(grad, count + 1, axis=_COPY_AXES[CopyAxis(axis)])
    total = pieces[0].copy()
    for piece in pieces[1:]:
        total += piece
    return total


def _check_input(x: np.ndarray, frames: int, joints: int, features: int,
                 operation: str) -> None:
    expected = (x.shape[0], frames, joints, features)
    if x.ndim != 4 or x.shape != expected:
        raise ShapeError(operation, expected, x.shape)


# ---------------------------------------------------------------------------
# Encoder / decoder / stage
# ---------------------------------------------------------------------------

@dataclass
class EncoderCache:
    x: np.ndarray
    in_gcl: GclCache
    gcbs: List[GcbCache]


def encoder_forward(p: StageParams, config: ModelConfig, x: np.ndarray, mode: Mode,
                    rng: Optional[np.random.Generator]) -> Tuple[np.ndarray, EncoderCache]:
    """out = enc_proj(x) + GCBs(GCL_in(x)), pose space -> feature space"""
    _check_input(x, config.seq_len, config.joints, config.dims, "encoder_forward")
    h, in_cache = gcl_forward(p.enc_in_gcl, x, mode, rng)
    gcb_caches = []
    for gcb in p.enc_gcbs:
        h, c = gcb_forward(gcb, h, mode, rng)
        gcb_caches.append(c)
    return pointwise_linear(p.enc_proj.value, x) + h, EncoderCache(x=x, in_gcl=in_cache, gcbs=gcb_caches)


def encoder_backward(p: StageParams, cache: EncoderCache, grad_out: np.ndarray) -> np.ndarray:
    grad_x, grad_w, _ = pointwise_linear_backward(p.enc_proj.value, cache.x, grad_out)
    p.enc_proj.accumulate(grad_w)
    grad = grad_out
    for gcb, c in zip(reversed(p.enc_gcbs), reversed(cache.gcbs)):
        grad = gcb_backward(gcb, c, grad)
    return grad_x + gcl_backward(p.enc_in_gcl, cache.in_gcl, grad)


@dataclass
class DecoderCache:
    h: np.ndarray
    gcbs: List[GcbCache]
    body: np.ndarray
    spatial: np.ndarray


def decoder_forward(p: StageParams, config: ModelConfig, h: np.ndarray, mode: Mode,
                    rng: Optional[np.random.Generator]) -> Tuple[np.ndarray, DecoderCache]:
    """out = dec_proj(h) + T-DGCN(S-DGCN(GCBs(h))), feature space -> pose space"""
    _check_input(h, config.decoder_frames, config.decoder_joints, config.decoder_features,
                 "decoder_forward")
    body = h
    gcb_caches = []
    for gcb in p.dec_gcbs:
        body, c = gcb_forward(gcb, body, mode, rng)
        gcb_caches.append(c)
    spatial = sdgcn_forward(p.dec_out_sdgcn, body)
    temporal = tdgcn_forward(p.dec_out_tdgcn, spatial)
    out = pointwise_linear(p.dec_proj.value, h) + temporal
    return out, DecoderCache(h=h, gcbs=gcb_caches, body=body, spatial=spatial)


def decoder_backward(p: StageParams, cache: DecoderCache, grad_out: np.ndarray) -> np.ndarray:
    grad_h, grad_w, _ = pointwise_linear_backward(p.dec_proj.value, cache.h, grad_out)
    p.dec_proj.accumulate(grad_w)
    grad, grad_a, grad_w = tdgcn_backward(p.dec_out_tdgcn, cache.spatial, grad_out)
    p.dec_out_tdgcn.adjacency.accumulate(grad_a)
    p.dec_out_tdgcn.weight.accumulate(grad_w)
    grad, grad_a, grad_w = sdgcn_backward(p.dec_out_sdgcn, cache.body, grad)
    p.dec_out_sdgcn.adjacency.accumulate(grad_a)
    p.dec_out_sdgcn.weight.accumulate(grad_w)
    for gcb, c in zip(reversed(p.dec_gcbs), reversed(cache.gcbs)):
        grad = gcb_backward(gcb, c, grad)
    return grad_h + grad


@dataclass
class StageCache:
    encoder: EncoderCache
    decoder: DecoderCache
    decoded_shape: Tuple[int, ...]


def stage_forward(p: StageParams, config: ModelConfig, x: np.ndarray, mode: Mode,
                  rng: Optional[np.random.Generator]) -> Tuple[np.ndarray, StageCache]:
    """encoder -> copy -> decoder -> keep the front L frames (and front M joints)"""
    encoded, enc_cache = encoder_forward(p, config, x, mode, rng)
    copied = copy_features(encoded, config.copy_count, config.copy_axis)
    decoded, dec_cache = decoder_forward(p, config, copied, mode, rng)
    out = np.ascontiguousarray(decoded[:, :config.seq_len, :config.joints])
    return out, StageCache(encoder=enc_cache, decoder=dec_cache, decoded_shape=decoded.shape)


def stage_backward(p: StageParams, config: ModelConfig, cache: StageCache, grad_out: np.ndarray) -> np.ndarray:
    grad_decoded = np.zeros(cache.decoded_shape, dtype=grad_out.dtype)
    grad_decoded[:, :config.seq_len, :config.joints] = grad_out
    grad_copied = decoder_backward(p, cache.decoder, grad_decoded)
    grad_encoded = _copy_backward(grad_copied, config.copy_count, config.copy_axis)
    return encoder_backward(p, cache.encoder, grad_encoded)


# ---------------------------------------------------------------------------
# Multi-stage framework
# ---------------------------------------------------------------------------

@dataclass
class MultiStageCache:
    inputs: List[np.ndarray] = field(default_factory=list)
    stages: List[StageCache] = field(default_factory=list)


def multistage_forward(m: ModelParams, obs: np.ndarray, mode: Mode, rng: Optional[np.random.Generator],
                       initial_guess: Optional[np.ndarray] = None) -> Tuple[List[np.ndarray], MultiStageCache]:
    """Run all T stages on an observation batch (B, T_h, M, D)

    Stage 1 sees the observation padded with its last pose (or `initial_guess`,
    a (B, T_f, M, D) future used by the oracle padding experiments); stage i
    sees the observation followed by the future frames of stage i-1.
    """
    config = m.config
    expected = (obs.shape[0], config.t_h, config.joints, config.dims)
    if obs.ndim != 4 or obs.shape != expected:
        raise ShapeError("multistage_forward", expected, obs.shape)
    if initial_guess is None:
        x = pad_batch_with_last_pose(obs, config.t_f)
    else:
        x = concat_frames(obs, initial_guess.astype(obs.dtype, copy=False))
    cache = MultiStageCache()
    preds = []
    for stage in m.stages:
        cache.inputs.append(x)
        pred, stage_cache = stage_forward(stage, config, x, mode, rng)
        cache.stages.append(stage_cache)
        preds.append(pred)
        x = concat_frames(obs, pred[:, config.t_h:])
    return preds, cache


def multistage_backward(m: ModelParams, cache: MultiStageCache, grad_preds: List[np.ndarray]) -> None:
    """Accumulate parameter gradients given d(loss)/d(prediction) for every stage"""
    config = m.config
    if len(grad_preds) != len(m.stages):
        raise ShapeError("multistage_backward", (len(m.stages),), (len(grad_preds),))
    carry = None
    for i in reversed(range(len(m.stages))):
        grad = grad_preds[i] if carry is None else grad_preds[i] + carry
        grad_input = stage_backward(m.stages[i], config, cache.stages[i], grad)
        carry = np.zeros_like(grad_input)
        carry[:, config.t_h:] = grad_input[:, config.t_h:]


def predict(m: ModelParams, obs: np.ndarray, initial_guess: Optional[np.ndarray] = None) -> List[np.ndarray]:
    """Eval-mode forward; read-only on the model"""
    preds, _ = multistage_forward(m, obs.astype(m.dtype, copy=False), Mode.EVAL, None, initial_guess)
    return preds
