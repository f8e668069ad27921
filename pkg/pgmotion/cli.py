"""
pgmotion command line

Exit codes: 0 success, 1 usage or config error, 2 data or checkpoint error,
3 non-finite loss.
"""

import functools
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

try:  # typer >= 0.26 vendors its own click
    from typer._click import exceptions as click_exceptions
except ImportError:
    from click import exceptions as click_exceptions
import numpy as np
import pandas as pd
import structlog
import typer
from pydantic import ValidationError

from .checkpoint import load_checkpoint, save_checkpoint
from .core.config import RunSettings, merge_overrides, parse_overrides
from .core.logging import configure_logging
from .datasets import load_sequence, import_csv, load_split, save_sequence, synth_motion, write_corpus
from .exceptions import ConfigError, DataError, PGMotionError
from .metrics import horizon_report, per_joint_mpjpe, usable_horizons
from .models import SmoothMethod, SynthParams
from .network import count_parameters, init_model, predict as predict_stages
from .sequence import MotionSequence
from .targets import aas_frames, gaussian_frames, mean_x_future
from .training import TrainingHooks, check_dataset, metric_for, predict_windows, train, write_metrics_csv
from .experiments import EXPERIMENTS, run_ablation

logger = structlog.get_logger(__name__)

app = typer.Typer(name="pgmotion", help="Progressive multi-stage human motion prediction", add_completion=False)

CONFIG_OPTION = typer.Option(None, "--config", "-c", help="Sectioned key=value config file")
SET_OPTION = typer.Option(None, "--set", help="Override as section.key=value (repeatable)")
LOG_OPTION = typer.Option(None, "--log-level", help="DEBUG, INFO, WARNING or ERROR")


def handle_errors(func):
    """Map library errors onto the exit-code contract"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except PGMotionError as exc:
            logger.error("command_failed", code=exc.code, error=exc.message, **_loggable(exc.details))
            typer.echo(f"error: {exc.message}", err=True)
            raise typer.Exit(code=exc.exit_code)
        except ValidationError as exc:
            typer.echo(f"error: {exc}", err=True)
            raise typer.Exit(code=ConfigError.exit_code)
    return wrapper


def _loggable(details: Dict) -> Dict:
    return {k: (v if isinstance(v, (int, float, str, bool)) or v is None else str(v)) for k, v in details.items()}


def _load_settings(config: Optional[Path], sets: Optional[List[str]], flags: Dict[str, Dict[str, object]],
                   log_level: Optional[str]) -> RunSettings:
    overrides = merge_overrides(parse_overrides(sets or []),
                                {section: {k: v for k, v in values.items() if v is not None}
                                 for section, values in flags.items()})
    if log_level:
        overrides.setdefault("run", {})["log_level"] = log_level
    settings = RunSettings.load(config, overrides)
    configure_logging(settings.run.log_level)
    return settings


def _data_root(settings: RunSettings, data: Optional[Path]) -> Path:
    root = data or settings.data.root
    if root is None:
        raise ConfigError("data.root", "no dataset given; pass --data or set [data] root")
    return Path(root)


def _out_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"Cannot create output directory '{path}': {exc}", "UNWRITABLE_OUTPUT") from exc
    return path


def _write_csv(table: pd.DataFrame, out: Optional[Path]) -> None:
    if out is None:
        table.to_csv(sys.stdout, index=False, float_format="%.9g")
    else:
        table.to_csv(out, index=False, float_format="%.9g")


def _parse_horizons(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise ConfigError("horizons", f"expected comma-separated milliseconds, got '{text}'") from exc


def _read_sequence(path: Path, fps: float, joints: Optional[int], dims: Optional[int]) -> MotionSequence:
    if path.suffix.lower() == ".csv":
        if joints is None or dims is None:
            raise ConfigError("joints", "CSV input needs --joints and --dims")
        return import_csv(path, fps, joints, dims)
    try:
        return load_sequence(path)
    except OSError as exc:
        raise DataError(f"Cannot read sequence '{path}': {exc}", "MISSING_DATA") from exc


@app.command()
@handle_errors
def synth(
    out: Path = typer.Option(Path("data/synth"), "--out", "-o"),
    seed: int = typer.Option(0, "--seed"),
    n: int = typer.Option(16, "--n", min=0, help="Number of sequences"),
    frames: int = typer.Option(120, "--frames", min=1),
    joints: int = typer.Option(22, "--joints", min=1),
    dims: int = typer.Option(3, "--dims", min=1),
    fps: float = typer.Option(25.0, "--fps"),
    components: int = typer.Option(3, "--components"),
    amp_min: float = typer.Option(10.0, "--amp-min"),
    amp_max: float = typer.Option(100.0, "--amp-max"),
    freq_min: float = typer.Option(0.2, "--freq-min"),
    freq_max: float = typer.Option(2.0, "--freq-max"),
    drift: float = typer.Option(20.0, "--drift"),
    noise: float = typer.Option(1.0, "--noise"),
    log_level: str = typer.Option("INFO", "--log-level"),
):
    """Generate a synthetic motion corpus with a train/val/test manifest"""
    configure_logging(log_level)
    params = SynthParams(components=components, amplitude_min=amp_min, amplitude_max=amp_max,
                         frequency_min=freq_min, frequency_max=freq_max, drift=drift,
                         noise_sigma=noise, fps=fps)
    sequences = synth_motion(seed, n, frames, joints, dims, params)
    manifest = write_corpus(sequences, out, seed)
    typer.echo(json.dumps({k: len(v) for k, v in manifest.splits.items()}, sort_keys=True))


@app.command("train")
@handle_errors
def train_cmd(
    config: Optional[Path] = CONFIG_OPTION,
    sets: Optional[List[str]] = SET_OPTION,
    data: Optional[Path] = typer.Option(None, "--data", help="Corpus directory"),
    out: Optional[Path] = typer.Option(None, "--out", "-o"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    epochs: Optional[int] = typer.Option(None, "--epochs"),
    log_level: Optional[str] = LOG_OPTION,
):
    """Train a model; writes last.ckpt, best.ckpt and metrics.csv"""
    settings = _load_settings(config, sets, {"train": {"seed": seed, "epochs": epochs},
                                             "run": {"out": str(out) if out else None}}, log_level)
    root = _data_root(settings, data)
    out_dir = _out_dir(Path(settings.run.out))
    logger.info("run_config", **settings.model_dump(mode="json"))

    train_data = load_split(root, settings.data.train_split, settings.model.t_h, settings.model.t_f,
                            settings.data.stride)
    try:
        val_data = load_split(root, settings.data.val_split, settings.model.t_h, settings.model.t_f)
    except DataError:
        val_data = None
    model = init_model(settings.model, seed=settings.train.seed)
    logger.info("model_built", parameters=model.num_parameters(), closed_form=count_parameters(settings.model),
                windows=len(train_data))

    def checkpoint_last(record, current, state):
        save_checkpoint(out_dir / "last.ckpt", current, settings.train, state)

    log = train(model, train_data, settings.train, TrainingHooks(on_epoch_end=checkpoint_last), val_data)
    save_checkpoint(out_dir / "last.ckpt", model, settings.train, log.state)
    save_checkpoint(out_dir / "best.ckpt", log.best_model or model, settings.train)
    write_metrics_csv(log.records, out_dir / "metrics.csv")
    (out_dir / "config.json").write_text(json.dumps(settings.model_dump(mode="json"), indent=2, sort_keys=True))
    logger.info("training_complete", epochs=len(log.records), steps=len(log.step_losses), best_epoch=log.best_epoch)


@app.command("eval")
@handle_errors
def eval_cmd(
    checkpoint: Path = typer.Argument(..., help="Checkpoint file"),
    data: Optional[Path] = typer.Option(None, "--data", help="Corpus directory"),
    split: Optional[str] = typer.Option(None, "--split"),
    horizons: Optional[str] = typer.Option(None, "--horizons", help="Comma-separated milliseconds"),
    per_stage: bool = typer.Option(False, "--per-stage", help="Report every stage"),
    per_joint: Optional[Path] = typer.Option(None, "--per-joint", help="Also write per-joint MPJPE CSV here"),
    gt_as_prediction: bool = typer.Option(False, "--gt-as-prediction", help="Score the ground truth against itself"),
    workers: Optional[int] = typer.Option(None, "--workers", min=1),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Report CSV (stdout when omitted)"),
    config: Optional[Path] = CONFIG_OPTION,
    sets: Optional[List[str]] = SET_OPTION,
    log_level: Optional[str] = LOG_OPTION,
):
    """Score a checkpoint per prediction horizon"""
    settings = _load_settings(config, sets, {"run": {"workers": workers}}, log_level)
    # model fields given by --config or --set must agree with the checkpoint
    ckpt = load_checkpoint(checkpoint, expected_config=settings.model)
    model = ckpt.model
    windows = load_split(_data_root(settings, data), split or settings.data.test_split,
                         model.config.t_h, model.config.t_f, settings.data.stride)
    check_dataset(model, windows)
    if horizons is None:
        requested = usable_horizons(settings.train.horizons_ms, windows.fps, model.config.t_f)
    else:
        requested = _parse_horizons(horizons)
    metric = metric_for(model)
    t_h = model.config.t_h
    logger.info("evaluating", windows=len(windows), stages=model.config.num_stages, metric=metric.value)

    if gt_as_prediction:
        reports = [horizon_report(windows.future, windows.future, requested, windows.fps, metric)]
        final = windows.future
    else:
        preds = predict_windows(model, windows, ckpt.train, workers=settings.run.workers)
        final = preds[-1][:, t_h:]
        if per_stage:
            reports = [horizon_report(p[:, t_h:], windows.future, requested, windows.fps, metric, stage=i + 1)
                       for i, p in enumerate(preds)]
        else:
            reports = [horizon_report(final, windows.future, requested, windows.fps, metric)]

    rows = [{**row, "metric": metric.value} for report in reports for row in report.rows()]
    _write_csv(pd.DataFrame(rows, columns=["stage", "horizon_ms", "metric", "value"]), out)
    if per_joint is not None:
        errors = per_joint_mpjpe(final, windows.future)
        pd.DataFrame({"joint": np.arange(len(errors)), "mpjpe": errors}).to_csv(
            per_joint, index=False, float_format="%.9g")


@app.command()
@handle_errors
def predict(
    checkpoint: Path = typer.Argument(..., help="Checkpoint file"),
    observed: Path = typer.Argument(..., help="Observed sequence (.pgmp)"),
    out: Path = typer.Option(Path("predictions"), "--out", "-o", help="Output directory"),
    all_stages: bool = typer.Option(False, "--all-stages", help="Write every stage's future"),
    log_level: str = typer.Option("INFO", "--log-level"),
):
    """Predict the future of one observed sequence"""
    configure_logging(log_level)
    model = load_checkpoint(checkpoint).model
    c = model.config
    seq = _read_sequence(observed, 25.0, None, None)
    if seq.length < c.t_h:
        raise DataError(f"Observed sequence has {seq.length} frames, model needs {c.t_h}", "SEQUENCE_TOO_SHORT",
                        {"frames": seq.length, "t_h": c.t_h})
    if (seq.joints, seq.dims) != (c.joints, c.dims):
        raise DataError(f"Sequence has M={seq.joints}, D={seq.dims}; checkpoint expects M={c.joints}, D={c.dims}",
                        "SHAPE_MISMATCH")
    preds = predict_stages(model, seq.frames[None, :c.t_h])
    out_dir = _out_dir(out)
    if all_stages:
        targets = [(out_dir / f"stage_{i + 1}.pgmp", p) for i, p in enumerate(preds)]
    else:
        targets = [(out_dir / "prediction.pgmp", preds[-1])]
    for path, pred in targets:
        save_sequence(MotionSequence(frames=pred[0, c.t_h:].astype(np.float32), fps=seq.fps), path)
    logger.info("prediction_written", files=len(targets), frames=c.t_f)


@app.command()
@handle_errors
def smooth(
    sequence: Path = typer.Argument(..., help="Sequence file (.pgmp, or .csv with --joints/--dims)"),
    method: SmoothMethod = typer.Option(SmoothMethod.AAS, "--method"),
    iterations: int = typer.Option(3, "--iterations", min=1),
    window: int = typer.Option(21, "--window"),
    x: int = typer.Option(25, "--x", min=1, help="Poses averaged by mean-x"),
    t_h: int = typer.Option(10, "--t-h", min=1, help="History frames left untouched"),
    full: bool = typer.Option(False, "--full", help="Gaussian over the whole sequence, history included"),
    joints: Optional[int] = typer.Option(None, "--joints"),
    dims: Optional[int] = typer.Option(None, "--dims"),
    fps: float = typer.Option(25.0, "--fps"),
    out: Optional[Path] = typer.Option(None, "--out", "-o"),
    log_level: str = typer.Option("INFO", "--log-level"),
):
    """Emit original and smoothed trajectories as CSV columns"""
    configure_logging(log_level)
    seq = _read_sequence(sequence, fps, joints, dims)
    if seq.length <= t_h:
        raise ConfigError("t_h", f"sequence of {seq.length} frames has no future after {t_h} history frames")
    levels = [seq.frames]
    for _ in range(iterations):
        current = levels[-1]
        if method == SmoothMethod.AAS:
            levels.append(aas_frames(current, t_h))
        elif method == SmoothMethod.GAUSSIAN:
            levels.append(gaussian_frames(current, t_h, window, future_only=not full))
        else:
            future = mean_x_future(current[t_h:], min(x, seq.length - t_h))
            levels.append(np.concatenate([current[:t_h], future]))
    label = method.value.replace("-", "_")
    columns = {"frame": np.arange(seq.length)}
    for m in range(seq.joints):
        for d in range(seq.dims):
            columns[f"j{m}_d{d}_original"] = levels[0][:, m, d]
            for k, level in enumerate(levels[1:], start=1):
                columns[f"j{m}_d{d}_{label}{k}"] = level[:, m, d]
    _write_csv(pd.DataFrame(columns), out)


@app.command()
@handle_errors
def ablate(
    experiment: str = typer.Argument(..., help=f"One of: {', '.join(EXPERIMENTS)}"),
    config: Optional[Path] = CONFIG_OPTION,
    sets: Optional[List[str]] = SET_OPTION,
    data: Optional[Path] = typer.Option(None, "--data", help="Corpus directory"),
    seeds: str = typer.Option("0", "--seeds", help="Comma-separated seeds; medians are reported"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Comparison CSV (stdout when omitted)"),
    log_level: Optional[str] = LOG_OPTION,
):
    """Train every variant of an ablation and compare test errors"""
    if experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment '{experiment}' (choose from {sorted(EXPERIMENTS)})")
    settings = _load_settings(config, sets, {}, log_level)
    try:
        seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError("seeds", f"expected comma-separated integers, got '{seeds}'") from exc
    root = _data_root(settings, data)
    c = settings.model
    train_data = load_split(root, settings.data.train_split, c.t_h, c.t_f, settings.data.stride)
    test_data = load_split(root, settings.data.test_split, c.t_h, c.t_f, settings.data.stride)
    table = run_ablation(experiment, c, settings.train, train_data, test_data, seed_list)
    _write_csv(table, out)


def main(argv: Optional[List[str]] = None) -> int:
    try:
        code = app(args=argv, prog_name="pgmotion", standalone_mode=False)
    except click_exceptions.UsageError as exc:
        exc.show()
        return 1
    except click_exceptions.Abort:
        return 1
    return code if isinstance(code, int) else 0


if __name__ == "__main__":
    sys.exit(main())
