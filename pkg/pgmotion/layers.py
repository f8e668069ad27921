"""
Differentiable layers of the stage network

S-DGCN, T-DGCN, batch normalization, tanh + dropout and the 1x1 projection,
each as a forward function plus a hand-derived backward function. GCL and GCB
compose them. Forward functions are pure apart from the batch-norm running
statistics, which train-mode forwards update in place. Composite backward
functions accumulate into the `grad` buffer of every Parameter they touch.
"""

import math
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from .exceptions import ConfigError, PGMotionError, ShapeError
from .models import AdjacencyInit, Mode
from .tensor import matmul_left, matmul_right, transpose_frames_joints


@dataclass(eq=False)
class Parameter:
    """A learnable buffer with its gradient and Adam moments"""
    value: np.ndarray
    grad: Optional[np.ndarray] = None
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.m is None:
            self.m = np.zeros_like(self.value)
        if self.v is None:
            self.v = np.zeros_like(self.value)
        for name in ("grad", "m", "v"):
            if getattr(self, name).shape != self.value.shape:
                raise ShapeError(f"Parameter.{name}", self.value.shape, getattr(self, name).shape)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad.fill(0)

    def accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.value.shape:
            raise ShapeError("Parameter.accumulate", self.value.shape, grad.shape)
        self.grad += grad

    def cast_(self, dtype) -> None:
        self.value = self.value.astype(dtype)
        self.grad = self.grad.astype(dtype)
        self.m = self.m.astype(dtype)
        self.v = self.v.astype(dtype)


@dataclass(eq=False)
class DenseGraphLayerParams:
    """Learnable adjacency A (n x n) and weight W (F_in x F_out) of one S-DGCN or T-DGCN"""
    adjacency: Parameter
    weight: Parameter

    def __post_init__(self):
        a = self.adjacency.shape
        if len(a) != 2 or a[0] != a[1]:
            raise ShapeError("DenseGraphLayerParams.adjacency", a, message=f"adjacency must be square, got {a}")
        if len(self.weight.shape) != 2:
            raise ShapeError("DenseGraphLayerParams.weight", self.weight.shape)

    @property
    def nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Parameter]]:
        yield f"{prefix}.adjacency", self.adjacency
        yield f"{prefix}.weight", self.weight


@dataclass(eq=False)
class BatchNormParams:
    """Per-feature-channel batch normalization over (batch, frames, joints)"""
    gamma: Parameter
    beta: Parameter
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        if self.eps <= 0:
            raise ConfigError("bn_eps", "must be positive")
        if np.any(self.running_var < 0):
            raise ConfigError("running_var", "must be non-negative")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Parameter]]:
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta

    def named_buffers(self, prefix: str) -> Iterator[Tuple[str, np.ndarray]]:
        yield f"{prefix}.running_mean", self.running_mean
        yield f"{prefix}.running_var", self.running_var

    def cast_(self, dtype) -> None:
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)


@dataclass(eq=False)
class GclParams:
    """S-DGCN -> T-DGCN -> batch norm -> tanh -> dropout"""
    sdgcn: DenseGraphLayerParams
    tdgcn: DenseGraphLayerParams
    bn: BatchNormParams
    dropout_rate: float = 0.3

    def __post_init__(self):
        width = self.sdgcn.out_features
        if self.tdgcn.in_features != width or self.tdgcn.out_features != width or self.bn.channels != width:
            raise ShapeError(
                "GclParams", self.sdgcn.weight.shape, self.tdgcn.weight.shape, (self.bn.channels,),
                message=f"GCL widths do not chain: S-DGCN out {width}, T-DGCN {self.tdgcn.weight.shape}, "
                        f"BN {self.bn.channels}",
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate", f"{self.dropout_rate} outside [0, 1)")

    @property
    def in_features(self) -> int:
        return self.sdgcn.in_features

    @property
    def out_features(self) -> int:
        return self.sdgcn.out_features

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Parameter]]:
        yield from self.sdgcn.named_parameters(f"{prefix}.sdgcn")
        yield from self.tdgcn.named_parameters(f"{prefix}.tdgcn")
        yield from self.bn.named_parameters(f"{prefix}.bn")

    def named_buffers(self, prefix: str) -> Iterator[Tuple[str, np.ndarray]]:
        yield from self.bn.named_buffers(f"{prefix}.bn")


@dataclass(eq=False)
class GcbParams:
    """Residual block of two width-preserving GCLs"""
    first: GclParams
    second: GclParams

    def __post_init__(self):
        for name, gcl in (("first", self.first), ("second", self.second)):
            if gcl.in_features != gcl.out_features:
                raise ConfigError(
                    f"gcb.{name}",
                    f"GCBs work at constant width, got {gcl.in_features} -> {gcl.out_features}",
                )
        if self.first.out_features != self.second.in_features:
            raise ConfigError("gcb", "GCL widths differ inside a block")

    @property
    def width(self) -> int:
        return self.first.in_features

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Parameter]]:
        yield from self.first.named_parameters(f"{prefix}.gcl0")
        yield from self.second.named_parameters(f"{prefix}.gcl1")

    def named_buffers(self, prefix: str) -> Iterator[Tuple[str, np.ndarray]]:
        yield from self.first.named_buffers(f"{prefix}.gcl0")
        yield from self.second.named_buffers(f"{prefix}.gcl1")


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def init_adjacency(nodes: int, rng: np.random.Generator, dtype,
                   scheme: AdjacencyInit = AdjacencyInit.UNIFORM) -> np.ndarray:
    bound = 1.0 / math.sqrt(nodes)
    noise = rng.uniform(-bound, bound, size=(nodes, nodes))
    if scheme == AdjacencyInit.IDENTITY_NOISE:
        return (np.eye(nodes) + 0.1 * noise).astype(dtype)
    return noise.astype(dtype)


def xavier_uniform(fan_in: int, fan_out: int, rng: np.random.Generator, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def init_dense_graph_layer(nodes: int, in_features: int, out_features: int, rng: np.random.Generator,
                           dtype, scheme: AdjacencyInit = AdjacencyInit.UNIFORM) -> DenseGraphLayerParams:
    adjacency = init_adjacency(nodes, rng, dtype, scheme)
    weight = xavier_uniform(in_features, out_features, rng, dtype)
    return DenseGraphLayerParams(adjacency=Parameter(adjacency), weight=Parameter(weight))


def init_batchnorm(channels: int, dtype, eps: float = 1e-5, momentum: float = 0.1) -> BatchNormParams:
    return BatchNormParams(
        gamma=Parameter(np.ones(channels, dtype=dtype)),
        beta=Parameter(np.zeros(channels, dtype=dtype)),
        running_mean=np.zeros(channels, dtype=dtype),
        running_var=np.ones(channels, dtype=dtype),
        eps=eps,
        momentum=momentum,
    )


def init_gcl(joints: int, frames: int, in_features: int, out_features: int, rng: np.random.Generator,
             dtype, dropout_rate: float = 0.3, scheme: AdjacencyInit = AdjacencyInit.UNIFORM,
             eps: float = 1e-5, momentum: float = 0.1) -> GclParams:
    return GclParams(
        sdgcn=init_dense_graph_layer(joints, in_features, out_features, rng, dtype, scheme),
        tdgcn=init_dense_graph_layer(frames, out_features, out_features, rng, dtype, scheme),
        bn=init_batchnorm(out_features, dtype, eps, momentum),
        dropout_rate=dropout_rate,
    )


def init_gcb(joints: int, frames: int, width: int, rng: np.random.Generator, dtype,
             dropout_rate: float = 0.3, scheme: AdjacencyInit = AdjacencyInit.UNIFORM,
             eps: float = 1e-5, momentum: float = 0.1) -> GcbParams:
    return GcbParams(
        first=init_gcl(joints, frames, width, width, rng, dtype, dropout_rate, scheme, eps, momentum),
        second=init_gcl(joints, frames, width, width, rng, dtype, dropout_rate, scheme, eps, momentum),
    )


# ---------------------------------------------------------------------------
# Dense graph convolutions
# ---------------------------------------------------------------------------

def _require_rank4(operation: str, x: np.ndarray) -> None:
    if x.ndim != 4:
        raise ShapeError(operation, x.shape, message=f"{operation}: expected (B, L, M, F), got {x.shape}")


def _graph_product(a: np.ndarray, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    return matmul_right(matmul_left(a, x), w)


def _graph_product_backward(a: np.ndarray, w: np.ndarray, x: np.ndarray,
                            grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    grad_ax = matmul_right(grad_out, w.T)
    grad_x = matmul_left(a.T, grad_ax)
    grad_a = np.tensordot(grad_ax, x, axes=([0, 1, 3], [0, 1, 3]))
    grad_w = np.tensordot(matmul_left(a, x), grad_out, axes=([0, 1, 2], [0, 1, 2]))
    return grad_x, grad_a, grad_w


def _check_graph_layer(operation: str, p: DenseGraphLayerParams, x: np.ndarray, node_axis: int) -> None:
    _require_rank4(operation, x)
    if x.shape[node_axis] != p.nodes or x.shape[3] != p.in_features:
        raise ShapeError(operation, x.shape, p.adjacency.shape, p.weight.shape)


def sdgcn_forward(p: DenseGraphLayerParams, x: np.ndarray) -> np.ndarray:
    """out[b, l] = A^s x[b, l] W^s, one joint graph shared by every frame"""
    _check_graph_layer("sdgcn_forward", p, x, node_axis=2)
    return _graph_product(p.adjacency.value, p.weight.value, x)


def sdgcn_backward(p: DenseGraphLayerParams, x: np.ndarray,
                   grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_x, grad_A, grad_W)"""
    _check_graph_layer("sdgcn_backward", p, x, node_axis=2)
    expected = x.shape[:3] + (p.out_features,)
    if grad_out.shape != expected:
        raise ShapeError("sdgcn_backward", expected, grad_out.shape)
    return _graph_product_backward(p.adjacency.value, p.weight.value, x, grad_out)


def tdgcn_forward(p: DenseGraphLayerParams, x: np.ndarray) -> np.ndarray:
    """Transpose to trajectories, apply A^t y W^t per joint, transpose back"""
    _check_graph_layer("tdgcn_forward", p, x, node_axis=1)
    y = transpose_frames_joints(x)
    return transpose_frames_joints(_graph_product(p.adjacency.value, p.weight.value, y))


def tdgcn_backward(p: DenseGraphLayerParams, x: np.ndarray,
                   grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    _check_graph_layer("tdgcn_backward", p, x, node_axis=1)
    expected = x.shape[:3] + (p.out_features,)
    if grad_out.shape != expected:
        raise ShapeError("tdgcn_backward", expected, grad_out.shape)
    grad_y, grad_a, grad_w = _graph_product_backward(
        p.adjacency.value, p.weight.value, transpose_frames_joints(x), transpose_frames_joints(grad_out)
    )
    return transpose_frames_joints(grad_y), grad_a, grad_w


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

@dataclass
class BatchNormCache:
    mode: Mode
    x_hat: np.ndarray
    inv_std: np.ndarray


def batchnorm_forward(p: BatchNormParams, x: np.ndarray, mode: Mode) -> Tuple[np.ndarray, BatchNormCache]:
    if x.shape[-1] != p.channels:
        raise ShapeError("batchnorm_forward", x.shape, (p.channels,))
    axes = tuple(range(x.ndim - 1))
    if mode == Mode.TRAIN:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        p.running_mean[...] = (1.0 - p.momentum) * p.running_mean + p.momentum * mean
        p.running_var[...] = (1.0 - p.momentum) * p.running_var + p.momentum * var
    else:
        mean = p.running_mean
        var = p.running_var
    inv_std = 1.0 / np.sqrt(var + p.eps)
    x_hat = (x - mean) * inv_std
    out = p.gamma.value * x_hat + p.beta.value
    return out, BatchNormCache(mode=mode, x_hat=x_hat, inv_std=inv_std)


def batchnorm_backward(p: BatchNormParams, cache: Optional[BatchNormCache],
                       grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_x, grad_gamma, grad_beta)"""
    if cache is None:
        raise PGMotionError("batchnorm_backward called without a forward cache", "MISSING_CACHE")
    if grad_out.shape != cache.x_hat.shape:
        raise ShapeError("batchnorm_backward", cache.x_hat.shape, grad_out.shape)
    axes = tuple(range(grad_out.ndim - 1))
    grad_gamma = (grad_out * cache.x_hat).sum(axis=axes)
    grad_beta = grad_out.sum(axis=axes)
    grad_x_hat = grad_out * p.gamma.value
    if cache.mode == Mode.EVAL:
        return grad_x_hat * cache.inv_std, grad_gamma, grad_beta
    n = grad_out.size // grad_out.shape[-1]
    grad_x = (cache.inv_std / n) * (
        n * grad_x_hat
        - grad_x_hat.sum(axis=axes)
        - cache.x_hat * (grad_x_hat * cache.x_hat).sum(axis=axes)
    )
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# Activation, dropout, projection
# ---------------------------------------------------------------------------

@dataclass
class ActivationCache:
    activated: np.ndarray
    mask: Optional[np.ndarray]


def tanh_dropout(x: np.ndarray, rate: float, mode: Mode,
                 rng: Optional[np.random.Generator]) -> Tuple[np.ndarray, ActivationCache]:
    """tanh followed by inverted dropout; eval mode and rate 0 draw no random numbers"""
    if not 0.0 <= rate < 1.0:
        raise ConfigError("dropout_rate", f"{rate} outside [0, 1)")
    activated = np.tanh(x)
    if mode != Mode.TRAIN or rate == 0.0:
        return activated, ActivationCache(activated=activated, mask=None)
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / (1.0 - rate)
    return activated * mask, ActivationCache(activated=activated, mask=mask)


def tanh_dropout_backward(cache: ActivationCache, grad_out: np.ndarray) -> np.ndarray:
    if cache.mask is not None:
        grad_out = grad_out * cache.mask
    return grad_out * (1.0 - cache.activated * cache.activated)


def pointwise_linear(w: np.ndarray, x: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """1x1 convolution over the (frames, joints) grid: out[b, l, m] = x[b, l, m] w (+ bias)"""
    out = matmul_right(x, w)
    if bias is not None:
        if bias.shape != (w.shape[1],):
            raise ShapeError("pointwise_linear", w.shape, bias.shape)
        out = out + bias
    return out


def pointwise_linear_backward(w: np.ndarray, x: np.ndarray,
                              grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_x, grad_w, grad_bias)"""
    if grad_out.shape != x.shape[:-1] + (w.shape[1],):
        raise ShapeError("pointwise_linear_backward", x.shape, w.shape, grad_out.shape)
    lead = tuple(range(x.ndim - 1))
    grad_x = matmul_right(grad_out, w.T)
    grad_w = np.tensordot(x, grad_out, axes=(lead, lead))
    return grad_x, grad_w, grad_out.sum(axis=lead)


# ---------------------------------------------------------------------------
# GCL and GCB
# ---------------------------------------------------------------------------

@dataclass
class GclCache:
    x: np.ndarray
    spatial: np.ndarray
    temporal: np.ndarray
    bn: BatchNormCache
    activation: ActivationCache


def gcl_forward(p: GclParams, x: np.ndarray, mode: Mode,
                rng: Optional[np.random.Generator]) -> Tuple[np.ndarray, GclCache]:
    spatial = sdgcn_forward(p.sdgcn, x)
    temporal = tdgcn_forward(p.tdgcn, spatial)
    normed, bn_cache = batchnorm_forward(p.bn, temporal, mode)
    out, act_cache = tanh_dropout(normed, p.dropout_rate, mode, rng)
    return out, GclCache(x=x, spatial=spatial, temporal=temporal, bn=bn_cache, activation=act_cache)


def gcl_backward(p: GclParams, cache: GclCache, grad_out: np.ndarray) -> np.ndarray:
    grad = tanh_dropout_backward(cache.activation, grad_out)
    grad, grad_gamma, grad_beta = batchnorm_backward(p.bn, cache.bn, grad)
    p.bn.gamma.accumulate(grad_gamma)
    p.bn.beta.accumulate(grad_beta)
    grad, grad_a, grad_w = tdgcn_backward(p.tdgcn, cache.spatial, grad)
    p.tdgcn.adjacency.accumulate(grad_a)
    p.tdgcn.weight.accumulate(grad_w)
    grad, grad_a, grad_w = sdgcn_backward(p.sdgcn, cache.x, grad)
    p.sdgcn.adjacency.accumulate(grad_a)
    p.sdgcn.weight.accumulate(grad_w)
    return grad


@dataclass
class GcbCache:
    first: GclCache
    second: GclCache


def gcb_forward(p: GcbParams, x: np.ndarray, mode: Mode,
                rng: Optional[np.random.Generator]) -> Tuple[np.ndarray, GcbCache]:
    """out = x + GCL2(GCL1(x))"""
    if x.ndim != 4 or x.shape[-1] != p.width:
        raise ShapeError("gcb_forward", x.shape, (p.width,))
    hidden, first = gcl_forward(p.first, x, mode, rng)
    body, second = gcl_forward(p.second, hidden, mode, rng)
    return x + body, GcbCache(first=first, second=second)


def gcb_backward(p: GcbParams, cache: GcbCache, grad_out: np.ndarray) -> np.ndarray:
    grad_hidden = gcl_backward(p.second, cache.second, grad_out)
    return grad_out + gcl_backward(p.first, cache.first, grad_hidden)
