"""
Tests for losses, Adam, the schedule, the training loop and gradient checks
"""

import numpy as np
import pandas as pd
import pytest

from pgmotion.checkpoint import checkpoint_bytes
from pgmotion.datasets import WindowedDataset
from pgmotion.exceptions import ConfigError, DatasetShapeError, EmptyDatasetError, NumericalError, ShapeError
from pgmotion.layers import Parameter
from pgmotion.models import LossKind, Mode, Supervision, TrainConfig
from pgmotion.network import init_model, multistage_forward
from pgmotion.targets import build_target_batch
from pgmotion.tensor import GRADCHECK_DTYPE
from pgmotion.training import (
    AdamState,
    TrainingHooks,
    adam_step,
    compute_gradients,
    evaluate,
    finite_difference_check,
    gradient_check,
    initial_guess,
    lr_at_epoch,
    multi_stage_loss,
    stage_loss,
    stage_loss_and_grad,
    train,
    write_metrics_csv,
)


def _params_equal(a, b) -> bool:
    return all(np.array_equal(p.value, q.value) for (_, p), (_, q) in zip(a.named_parameters(), b.named_parameters()))


class TestStageLoss:
    def test_single_joint(self):
        pred = np.array([[3.0, 4.0, 0.0]])
        assert stage_loss(pred, np.zeros_like(pred)) == pytest.approx(5.0)

    def test_two_frames_averaged(self):
        pred = np.array([[[3.0, 4.0, 0.0]], [[0.0, 0.0, 0.0]]])
        assert stage_loss(pred, np.zeros_like(pred)) == pytest.approx(2.5)

    def test_zero_error_has_zero_gradient(self):
        pred = np.ones((2, 3, 2))
        loss, grad = stage_loss_and_grad(pred, pred.copy())
        assert loss == 0.0
        assert np.all(grad == 0)

    def test_other_kinds(self):
        pred = np.array([[1.0, -1.0]])
        target = np.zeros_like(pred)
        assert stage_loss(pred, target, LossKind.ABSOLUTE) == pytest.approx(1.0)
        assert stage_loss(pred, target, LossKind.SQUARED) == pytest.approx(1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            stage_loss(np.zeros((2, 3)), np.zeros((3, 3)))


class TestMultiStageLoss:
    @pytest.fixture
    def pair(self, rng):
        preds = [rng.normal(size=(2, 6, 3, 2)) for _ in range(3)]
        targets = [rng.normal(size=(2, 6, 3, 2)) for _ in range(3)]
        return preds, targets

    def test_sum_of_stages(self, pair):
        preds, targets = pair
        expected = sum(stage_loss(p, t) for p, t in zip(preds, targets))
        assert multi_stage_loss(preds, targets) == pytest.approx(expected)

    def test_final_only(self, pair):
        preds, targets = pair
        total = multi_stage_loss(preds, targets, supervision=Supervision.NONE)
        assert total == pytest.approx(stage_loss(preds[-1], targets[-1]))

    def test_gt_supervision_weights_every_stage(self, pair):
        preds, targets = pair
        assert multi_stage_loss(preds, targets, supervision=Supervision.GT) == pytest.approx(
            multi_stage_loss(preds, targets))

    def test_count_mismatch(self, pair):
        preds, targets = pair
        with pytest.raises(ShapeError):
            multi_stage_loss(preds, targets[:2])


class TestAdam:
    def test_zero_gradient_leaves_value(self):
        p = Parameter(np.array([1.0]))
        adam_step([p], AdamState(), 0.005)
        assert p.value[0] == 1.0

    def test_first_step_size(self):
        p = Parameter(np.array([1.0]))
        p.grad[...] = 2.0
        adam_step([p], AdamState(), 0.005)
        assert p.value[0] == pytest.approx(0.995, abs=1e-7)

    def test_minimizes_quadratic(self):
        p = Parameter(np.array([1.0]))
        state = AdamState()
        for _ in range(200):
            p.grad[...] = 2.0 * p.value
            adam_step([p], state, 0.05)
        assert abs(p.value[0]) < 0.05
        assert state.step == 200

    def test_small_step_decreases_objective(self, rng):
        p = Parameter(rng.normal(size=(4, 4)))
        before = float((p.value ** 2).sum())
        p.grad[...] = 2.0 * p.value
        adam_step([p], AdamState(), 1e-3)
        assert float((p.value ** 2).sum()) < before

    def test_rejects_non_positive_lr(self):
        with pytest.raises(ConfigError):
            adam_step([Parameter(np.zeros(1))], AdamState(), 0.0)


class TestSchedule:
    def test_exponential_decay(self):
        cfg = TrainConfig(lr0=0.005, lr_decay=0.96)
        assert lr_at_epoch(cfg, 0) == pytest.approx(0.005)
        assert lr_at_epoch(cfg, 1) == pytest.approx(0.0048)

    def test_constant_without_decay(self):
        cfg = TrainConfig(lr0=0.01, lr_decay=1.0)
        assert lr_at_epoch(cfg, 37) == pytest.approx(0.01)

    def test_negative_epoch(self):
        with pytest.raises(ConfigError):
            lr_at_epoch(TrainConfig(), -1)


class TestTrain:
    def test_zero_epochs(self, tiny_model, tiny_dataset):
        log = train(tiny_model, tiny_dataset, TrainConfig(epochs=0))
        assert log.records == []
        assert log.step_losses == []

    def test_deterministic(self, tiny_config, tiny_dataset, quick_train):
        a = init_model(tiny_config, seed=3)
        b = init_model(tiny_config, seed=3)
        log_a = train(a, tiny_dataset, quick_train)
        log_b = train(b, tiny_dataset, quick_train)
        assert log_a.step_losses == log_b.step_losses
        assert _params_equal(a, b)

    def test_checkpoint_bytes_identical(self, tiny_config, tiny_dataset, quick_train):
        a = init_model(tiny_config, seed=5)
        b = init_model(tiny_config, seed=5)
        log_a = train(a, tiny_dataset, quick_train)
        log_b = train(b, tiny_dataset, quick_train)
        assert checkpoint_bytes(a, quick_train, log_a.state) == checkpoint_bytes(b, quick_train, log_b.state)

    def test_partial_batches_kept(self, tiny_model, tiny_dataset, quick_train):
        log = train(tiny_model, tiny_dataset, quick_train)
        per_epoch = -(-len(tiny_dataset) // quick_train.batch_size)
        assert [r.steps for r in log.records] == [per_epoch, per_epoch]

    def test_max_steps(self, tiny_model, tiny_dataset):
        cfg = TrainConfig(epochs=10, batch_size=4, max_steps=3)
        log = train(tiny_model, tiny_dataset, cfg)
        assert len(log.step_losses) == 3

    def test_non_finite_loss(self, tiny_model, tiny_dataset, quick_train):
        tiny_model.parameters()[0].value[...] = np.nan
        with pytest.raises(NumericalError) as exc:
            train(tiny_model, tiny_dataset, quick_train)
        assert exc.value.details["epoch"] == 0
        assert exc.value.details["batch"] == 0
        assert exc.value.exit_code == 3

    def test_hooks_called(self, tiny_model, tiny_dataset, quick_train):
        steps, epochs = [], []
        hooks = TrainingHooks(on_step=lambda i, loss: steps.append(i),
                              on_epoch_end=lambda record, model, state: epochs.append(record.epoch))
        log = train(tiny_model, tiny_dataset, quick_train, hooks)
        assert steps == list(range(1, len(log.step_losses) + 1))
        assert epochs == [0, 1]

    def test_validation_and_best_model(self, tiny_model, tiny_dataset, quick_train):
        log = train(tiny_model, tiny_dataset, quick_train, val_data=tiny_dataset)
        assert all(r.val_average is not None for r in log.records)
        assert set(log.records[0].val_per_horizon) == {"40", "80", "120"}
        best = min(log.records, key=lambda r: r.val_average)
        assert log.best_epoch == best.epoch
        assert log.best_model is not tiny_model

    def test_metrics_csv(self, tmp_path, tiny_model, tiny_dataset, quick_train):
        log = train(tiny_model, tiny_dataset, quick_train, val_data=tiny_dataset)
        write_metrics_csv(log.records, tmp_path / "metrics.csv")
        table = pd.read_csv(tmp_path / "metrics.csv")
        assert list(table["epoch"]) == [0, 1]
        assert {"lr", "train_loss", "val_mpjpe_40ms", "val_mpjpe_120ms", "val_mpjpe_mean"} <= set(table.columns)

    def test_shape_mismatch(self, tiny_config, tiny_dataset, quick_train):
        model = init_model(tiny_config.model_copy(update={"joints": 4}), seed=0)
        with pytest.raises(DatasetShapeError) as exc:
            train(model, tiny_dataset, quick_train)
        assert exc.value.exit_code == 2
        assert exc.value.details["found"] == (3, 3, 3, 2)


class TestEvaluate:
    def test_per_stage_reports(self, tiny_model, tiny_dataset):
        reports = evaluate(tiny_model, tiny_dataset, [40, 120], per_stage=True)
        assert [r.stage for r in reports] == [1, 2]
        assert all(r.samples == len(tiny_dataset) for r in reports)

    def test_workers_do_not_change_results(self, tiny_model, tiny_dataset):
        serial = evaluate(tiny_model, tiny_dataset, [40], batch_size=3)[0]
        threaded = evaluate(tiny_model, tiny_dataset, [40], batch_size=3, workers=3)[0]
        assert serial.errors == threaded.errors
        assert serial.average == threaded.average

    def test_no_windows(self, tiny_model):
        with pytest.raises(EmptyDatasetError) as exc:
            evaluate(tiny_model, WindowedDataset.empty(3, 3, 3, 2), [40])
        assert exc.value.code == "EMPTY_DATASET"
        assert exc.value.exit_code == 2


class TestGradientCheck:
    def test_full_model_eval_mode(self, tiny_model64, tiny_batch):
        obs, future = tiny_batch
        report = gradient_check(tiny_model64, obs, future, tolerance=1e-4)
        assert report.passed, report.max_relative_error
        assert "sdgcn.adjacency" in report.checked

    def test_full_model_train_mode(self, tiny_model64, tiny_batch):
        obs, future = tiny_batch
        report = gradient_check(tiny_model64, obs, future, tolerance=1e-4, mode=Mode.TRAIN)
        assert report.passed, report.max_relative_error

    def test_linear_loss_is_exact(self, rng):
        weight = Parameter(rng.normal(size=(5, 2)))
        coefficients = rng.uniform(1.0, 2.0, size=(5, 2))
        weight.grad[...] = coefficients
        report = finite_difference_check(lambda: float((weight.value * coefficients).sum()),
                                         {"toy.weight": weight}, tolerance=1e-9)
        assert report.passed
        assert report.max_relative_error["toy.weight"] < 1e-9

    def test_corrupted_gradient_is_caught(self, tiny_model64, tiny_batch):
        obs, future = (a.astype(GRADCHECK_DTYPE) for a in tiny_batch)
        cfg = TrainConfig()
        targets = build_target_batch(obs, future, 2, cfg)
        compute_gradients(tiny_model64, obs, future, cfg)
        for p in tiny_model64.parameters():
            p.grad *= 2.0

        def loss_fn():
            preds, _ = multistage_forward(tiny_model64, obs, Mode.EVAL, None, initial_guess(future, cfg))
            return multi_stage_loss(preds, targets)

        report = finite_difference_check(loss_fn, dict(tiny_model64.named_parameters()))
        assert not report.passed

    def test_requires_float64(self, tiny_model, tiny_batch):
        with pytest.raises(ConfigError):
            gradient_check(tiny_model, *tiny_batch)

    def test_train_mode_requires_no_dropout(self, tiny_config, tiny_batch):
        model = init_model(tiny_config.model_copy(update={"dropout_rate": 0.3}), seed=0, dtype=GRADCHECK_DTYPE)
        with pytest.raises(ConfigError):
            gradient_check(model, *tiny_batch, mode=Mode.TRAIN)
