"""
Loss, optimizer and training loop

The loss sums one term per stage output against that stage's target. Adam
moments live on each Parameter; AdamState only carries the step counter and
hyperparameters.
"""

import copy
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, Field

from .datasets import WindowedDataset
from .exceptions import ConfigError, DatasetShapeError, EmptyDatasetError, NumericalError, ShapeError
from .layers import Parameter
from .metrics import horizon_report, usable_horizons
from .models import HorizonReport, LossKind, Metric, Mode, Padding, Representation, Supervision, TrainConfig
from .network import ModelParams, multistage_backward, multistage_forward
from .targets import StageTargets, build_target_batch, mean_x_future, stage_weights
from .tensor import GRADCHECK_DTYPE

logger = structlog.get_logger(__name__)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def stage_loss_and_grad(pred: np.ndarray, target: np.ndarray,
                        kind: LossKind = LossKind.PER_JOINT_NORM) -> Tuple[float, np.ndarray]:
    """Loss of one stage and its gradient w.r.t. pred

    The last axis holds the D coordinates; every leading axis is averaged.
    """
    if pred.shape != target.shape or pred.ndim < 2:
        raise ShapeError("stage_loss", pred.shape, target.shape)
    kind = LossKind(kind)
    error = pred - target.astype(pred.dtype, copy=False)
    if kind == LossKind.PER_JOINT_NORM:
        norms = np.linalg.norm(error, axis=-1, keepdims=True)
        count = norms.size
        safe = np.where(norms > 0, norms, 1.0)
        grad = np.where(norms > 0, error / safe, 0.0) / count
        return float(norms.sum(dtype=np.float64) / count), grad.astype(pred.dtype, copy=False)
    count = error.size
    if kind == LossKind.ABSOLUTE:
        return float(np.abs(error).sum(dtype=np.float64) / count), (np.sign(error) / count).astype(pred.dtype)
    return float((error * error).sum(dtype=np.float64) / count), (2.0 * error / count).astype(pred.dtype)


def stage_loss(pred: np.ndarray, target: np.ndarray, kind: LossKind = LossKind.PER_JOINT_NORM) -> float:
    return stage_loss_and_grad(pred, target, kind)[0]


def _target_arrays(targets: Union[StageTargets, Sequence[np.ndarray]]) -> List[np.ndarray]:
    if isinstance(targets, StageTargets):
        return [s.frames for s in targets.sequences]
    return list(targets)


def multi_stage_loss_and_grad(preds: Sequence[np.ndarray], targets: Union[StageTargets, Sequence[np.ndarray]],
                              kind: LossKind = LossKind.PER_JOINT_NORM,
                              supervision: Supervision = Supervision.AAS) -> Tuple[float, List[np.ndarray]]:
    targets = _target_arrays(targets)
    if len(preds) != len(targets):
        raise ShapeError("multi_stage_loss", (len(preds),), (len(targets),),
                         message=f"{len(preds)} predictions for {len(targets)} targets")
    total = 0.0
    grads = []
    for weight, pred, target in zip(stage_weights(supervision, len(preds)), preds, targets):
        loss, grad = stage_loss_and_grad(pred, target, kind)
        total += weight * loss
        grads.append(grad * weight if weight != 1.0 else grad)
    return total, grads


def multi_stage_loss(preds: Sequence[np.ndarray], targets: Union[StageTargets, Sequence[np.ndarray]],
                     kind: LossKind = LossKind.PER_JOINT_NORM, supervision: Supervision = Supervision.AAS) -> float:
    return multi_stage_loss_and_grad(preds, targets, kind, supervision)[0]


# ---------------------------------------------------------------------------
# Optimizer and schedule
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "AdamState":
        return cls(step=0, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update of every parameter from its `grad` buffer"""
    if lr <= 0:
        raise ConfigError("lr", f"learning rate must be positive, got {lr}")
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for p in params:
        if p.grad.shape != p.value.shape:
            raise ShapeError("adam_step", p.value.shape, p.grad.shape)
        p.m *= state.beta1
        p.m += (1.0 - state.beta1) * p.grad
        p.v *= state.beta2
        p.v += (1.0 - state.beta2) * p.grad * p.grad
        update = lr * (p.m / correction1) / (np.sqrt(p.v / correction2) + state.eps)
        p.value -= update.astype(p.value.dtype, copy=False)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise ConfigError("epoch", f"must be non-negative, got {epoch}")
    return cfg.lr0 * cfg.lr_decay ** epoch


# ---------------------------------------------------------------------------
# Prediction over a dataset
# ---------------------------------------------------------------------------

def metric_for(model: ModelParams) -> Metric:
    if model.config.representation == Representation.ANGLE:
        return Metric.MAE
    return Metric.MPJPE


def initial_guess(future: np.ndarray, cfg: Optional[TrainConfig]) -> Optional[np.ndarray]:
    """Oracle Mean-x padding from the ground-truth future, or None for last-pose padding"""
    if cfg is None or Padding(cfg.padding) == Padding.LAST_POSE:
        return None
    return mean_x_future(future, min(cfg.padding_mean_x, future.shape[1]), axis=1)


def check_dataset(model: ModelParams, data: WindowedDataset) -> None:
    c = model.config
    expected = (c.t_h, c.t_f, c.joints, c.dims)
    found = (data.t_h, data.t_f, data.joints, data.dims)
    if expected != found:
        raise DatasetShapeError(expected, found)


def predict_windows(model: ModelParams, data: WindowedDataset, cfg: Optional[TrainConfig] = None,
                    batch_size: int = 64, workers: int = 1) -> List[np.ndarray]:
    """Eval-mode predictions of every stage, each (N, L, M, D), in window order"""
    check_dataset(model, data)
    if len(data) == 0:
        raise EmptyDatasetError("predict_windows")
    starts = list(range(0, len(data), batch_size))

    def run(start: int) -> List[np.ndarray]:
        obs, future = data.batch(range(start, min(start + batch_size, len(data))))
        guess = initial_guess(future.astype(model.dtype), cfg)
        preds, _ = multistage_forward(model, obs.astype(model.dtype), Mode.EVAL, None, guess)
        return preds

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run, starts))
    else:
        chunks = [run(s) for s in starts]
    stages = model.config.num_stages
    return [np.concatenate([chunk[i] for chunk in chunks]) for i in range(stages)]


def evaluate(model: ModelParams, data: WindowedDataset, horizons_ms: Sequence[float],
             cfg: Optional[TrainConfig] = None, per_stage: bool = False,
             batch_size: int = 64, workers: int = 1) -> List[HorizonReport]:
    """Final-stage report, or one report per stage with per_stage"""
    preds = predict_windows(model, data, cfg, batch_size, workers)
    t_h = model.config.t_h
    metric = metric_for(model)
    if per_stage:
        return [horizon_report(p[:, t_h:], data.future, horizons_ms, data.fps, metric, stage=i + 1)
                for i, p in enumerate(preds)]
    return [horizon_report(preds[-1][:, t_h:], data.future, horizons_ms, data.fps, metric)]


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

class EpochRecord(BaseModel):
    epoch: int
    lr: float
    train_loss: float
    steps: int
    val_metric: Optional[Metric] = None
    val_average: Optional[float] = None
    val_per_horizon: Dict[str, float] = Field(default_factory=dict)


@dataclass
class TrainingHooks:
    """Optional callbacks; on_epoch_end is where the CLI writes checkpoints"""
    on_step: Optional[Callable[[int, float], None]] = None
    on_epoch_end: Optional[Callable[[EpochRecord, ModelParams, AdamState], None]] = None


@dataclass
class TrainLog:
    records: List[EpochRecord] = field(default_factory=list)
    step_losses: List[float] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_model: Optional[ModelParams] = None
    state: AdamState = field(default_factory=AdamState)


def train_step(model: ModelParams, obs: np.ndarray, future: np.ndarray, cfg: TrainConfig,
               state: AdamState, lr: float, rng: np.random.Generator) -> float:
    """One forward/backward/update on a batch; returns the loss before the update"""
    obs = obs.astype(model.dtype, copy=False)
    future = future.astype(model.dtype, copy=False)
    targets = build_target_batch(obs, future, model.config.num_stages, cfg)
    model.zero_grad()
    preds, cache = multistage_forward(model, obs, Mode.TRAIN, rng, initial_guess(future, cfg))
    loss, grads = multi_stage_loss_and_grad(preds, targets, cfg.loss_kind, cfg.intermediate_supervision)
    if not np.isfinite(loss):
        return loss
    multistage_backward(model, cache, grads)
    adam_step(model.parameters(), state, lr)
    return loss


def train(model: ModelParams, data: WindowedDataset, cfg: TrainConfig, hooks: Optional[TrainingHooks] = None,
          val_data: Optional[WindowedDataset] = None, state: Optional[AdamState] = None) -> TrainLog:
    """Train in place for cfg.epochs (or until cfg.max_steps optimizer steps)"""
    check_dataset(model, data)
    if val_data is not None and len(val_data):
        check_dataset(model, val_data)
    else:
        val_data = None
    hooks = hooks or TrainingHooks()
    log = TrainLog(state=state or AdamState.from_config(cfg))
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    if n == 0 and cfg.epochs > 0:
        logger.warning("empty_training_set")
    horizons = usable_horizons(cfg.horizons_ms, data.fps, model.config.t_f) if val_data is not None else []
    best = np.inf

    for epoch in range(cfg.epochs):
        if cfg.max_steps is not None and len(log.step_losses) >= cfg.max_steps:
            break
        lr = lr_at_epoch(cfg, epoch)
        order = rng.permutation(n)
        losses = []
        for batch, start in enumerate(range(0, n, cfg.batch_size)):
            if cfg.max_steps is not None and len(log.step_losses) >= cfg.max_steps:
                break
            obs, future = data.batch(order[start:start + cfg.batch_size])
            loss = train_step(model, obs, future, cfg, log.state, lr, rng)
            if not np.isfinite(loss):
                raise NumericalError(epoch, batch, loss, {"step": len(log.step_losses)})
            losses.append(loss)
            log.step_losses.append(loss)
            if hooks.on_step:
                hooks.on_step(len(log.step_losses), loss)

        record = EpochRecord(epoch=epoch, lr=lr, train_loss=float(np.mean(losses)) if losses else 0.0,
                             steps=len(losses))
        if val_data is not None:
            report = evaluate(model, val_data, horizons, cfg)[0]
            record.val_metric = report.metric
            record.val_average = report.average
            record.val_per_horizon = {f"{h:g}": e for h, e in zip(report.horizons_ms, report.errors)}
            if report.average < best:
                best = report.average
                log.best_epoch = epoch
                log.best_model = copy.deepcopy(model)
        log.records.append(record)
        logger.info("epoch_complete", epoch=epoch, lr=lr, train_loss=record.train_loss,
                    steps=len(log.step_losses), val=record.val_average)
        if hooks.on_epoch_end:
            hooks.on_epoch_end(record, model, log.state)

    if log.best_model is None and log.records:
        log.best_epoch = log.records[-1].epoch
        log.best_model = copy.deepcopy(model)
    return log


def write_metrics_csv(records: Sequence[EpochRecord], path: Union[str, Path]) -> None:
    rows = []
    for r in records:
        row = {"epoch": r.epoch, "lr": r.lr, "train_loss": r.train_loss}
        if r.val_metric is not None:
            metric = Metric(r.val_metric).value
            for h, value in r.val_per_horizon.items():
                row[f"val_{metric}_{h}ms"] = value
            row[f"val_{metric}_mean"] = r.val_average
        rows.append(row)
    columns = None if rows else ["epoch", "lr", "train_loss"]
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, float_format="%.9g")


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

class GradCheckReport(BaseModel):
    """Worst relative error per layer type"""
    tolerance: float
    max_relative_error: Dict[str, float] = Field(default_factory=dict)
    checked: Dict[str, int] = Field(default_factory=dict)
    failures: List[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and all(e <= self.tolerance for e in self.max_relative_error.values())


def layer_type(name: str) -> str:
    """stage0.enc_gcbs.0.gcl1.sdgcn.adjacency -> sdgcn.adjacency"""
    return ".".join(name.split(".")[-2:])


def finite_difference_check(loss_fn: Callable[[], float], params: Mapping[str, Parameter],
                            tolerance: float = 1e-4, samples: int = 200,
                            rng: Optional[np.random.Generator] = None, h: float = 1e-5,
                            floor: float = 1e-4,
                            group: Callable[[str], str] = layer_type) -> GradCheckReport:
    """Compare each Parameter's `grad` buffer against central differences of loss_fn

    At most `samples` coordinates are drawn per group. Relative error is
    |analytic - numeric| / max(|analytic|, |numeric|, floor).
    """
    rng = rng or np.random.default_rng(0)
    report = GradCheckReport(tolerance=tolerance)
    grouped: Dict[str, List[Tuple[str, int]]] = {}
    for name, p in params.items():
        grouped.setdefault(group(name), []).extend((name, i) for i in range(p.size))

    for kind, coordinates in grouped.items():
        if len(coordinates) > samples:
            picks = rng.choice(len(coordinates), size=samples, replace=False)
            coordinates = [coordinates[i] for i in sorted(picks)]
        worst = 0.0
        for name, flat in coordinates:
            p = params[name]
            index = np.unravel_index(flat, p.shape)
            original = p.value[index]
            p.value[index] = original + h
            plus = loss_fn()
            p.value[index] = original - h
            minus = loss_fn()
            p.value[index] = original
            numeric = (plus - minus) / (2.0 * h)
            analytic = float(p.grad[index])
            if not (np.isfinite(numeric) and np.isfinite(analytic)):
                report.failures.append(f"{name}{list(int(i) for i in index)}: non-finite gradient "
                                       f"(analytic={analytic}, numeric={numeric})")
                continue
            error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            worst = max(worst, error)
        report.max_relative_error[kind] = worst
        report.checked[kind] = len(coordinates)
    return report


def compute_gradients(model: ModelParams, obs: np.ndarray, future: np.ndarray, cfg: TrainConfig,
                      mode: Mode = Mode.EVAL) -> float:
    """Fill every parameter's grad with d(loss)/d(param) for one batch; returns the loss"""
    targets = build_target_batch(obs, future, model.config.num_stages, cfg)
    model.zero_grad()
    preds, cache = multistage_forward(model, obs, mode, None, initial_guess(future, cfg))
    loss, grads = multi_stage_loss_and_grad(preds, targets, cfg.loss_kind, cfg.intermediate_supervision)
    multistage_backward(model, cache, grads)
    return loss


def gradient_check(model: ModelParams, obs: np.ndarray, future: np.ndarray, tolerance: float = 1e-4,
                   cfg: Optional[TrainConfig] = None, samples: int = 200, seed: int = 0,
                   mode: Mode = Mode.EVAL) -> GradCheckReport:
    """Finite-difference check of the whole multi-stage model on one batch"""
    if model.dtype != GRADCHECK_DTYPE:
        raise ConfigError("dtype", f"gradient checks need a {np.dtype(GRADCHECK_DTYPE).name} model, "
                                   f"got {np.dtype(model.dtype).name}")
    if mode == Mode.TRAIN and model.config.dropout_rate > 0:
        raise ConfigError("dropout_rate", "train-mode gradient checks need dropout_rate = 0")
    cfg = cfg or TrainConfig()
    obs = obs.astype(GRADCHECK_DTYPE)
    future = future.astype(GRADCHECK_DTYPE)
    targets = build_target_batch(obs, future, model.config.num_stages, cfg)
    guess = initial_guess(future, cfg)

    def loss_fn() -> float:
        preds, _ = multistage_forward(model, obs, mode, None, guess)
        return multi_stage_loss(preds, targets, cfg.loss_kind, cfg.intermediate_supervision)

    compute_gradients(model, obs, future, cfg, mode)
    report = finite_difference_check(loss_fn, dict(model.named_parameters()), tolerance, samples,
                                     np.random.default_rng(seed))
    logger.info("gradient_check", passed=report.passed,
                worst=max(report.max_relative_error.values(), default=0.0))
    return report
