"""
Desk-scale training runs: overfitting a tiny set and directional ablations

Run with `pytest -m slow`. Each directional check compares medians over
five seeds on held-out synthetic sequences.
"""

import numpy as np
import pytest

from pgmotion.datasets import synth_motion, windows_from_sequences
from pgmotion.experiments import run_ablation
from pgmotion.metrics import horizon_report
from pgmotion.models import ModelConfig, TrainConfig
from pgmotion.network import init_model
from pgmotion.training import evaluate, train

pytestmark = pytest.mark.slow

SEEDS = [0, 1, 2, 3, 4]


@pytest.fixture(scope="module")
def desk_split():
    config = ModelConfig(t_h=10, t_f=25, joints=5, dims=3, dropout_rate=0.1)
    sequences = synth_motion(21, 30, 80, config.joints, config.dims)
    train_data = windows_from_sequences(sequences[:24], config.t_h, config.t_f, stride=5)
    test_data = windows_from_sequences(sequences[24:], config.t_h, config.t_f, stride=5)
    return config, train_data, test_data


@pytest.fixture(scope="module")
def desk_train():
    return TrainConfig(epochs=8, batch_size=16, lr_decay=0.96, horizons_ms=[80, 160, 320, 400, 560, 1000])


def _mean(table, variant):
    return float(table.loc[table["variant"] == variant, "mean"].iloc[0])


class TestOverfit:
    def test_tiny_set_is_memorized(self):
        config = ModelConfig(num_stages=4, t_h=8, t_f=10, joints=5, dims=3, dropout_rate=0.0)
        data = windows_from_sequences(synth_motion(0, 1, 33, 5, 3), config.t_h, config.t_f)
        assert len(data) == 16
        cfg = TrainConfig(lr_decay=1.0, epochs=2000, batch_size=16, max_steps=2000, horizons_ms=[80, 160, 320, 400])
        model = init_model(config, seed=0)
        log = train(model, data, cfg)

        assert len(log.step_losses) == 2000
        assert log.step_losses[-1] <= 0.05 * log.step_losses[0]

        trained = evaluate(model, data, cfg.horizons_ms, cfg)[0].average
        zero_motion = np.repeat(data.observed[:, -1:], config.t_f, axis=1)
        baseline = horizon_report(zero_motion, data.future, cfg.horizons_ms, data.fps).average
        assert trained <= 0.2 * baseline


class TestDirectional:
    def test_multi_stage_beats_single_stage(self, desk_split, desk_train):
        config, train_data, test_data = desk_split
        table = run_ablation("supervision", config, desk_train, train_data, test_data, SEEDS)
        assert _mean(table, "baseline") <= _mean(table, "single_stage")

    def test_intermediate_supervision_helps(self, desk_split, desk_train):
        config, train_data, test_data = desk_split
        table = run_ablation("supervision", config, desk_train, train_data, test_data, SEEDS)
        assert _mean(table, "aas_all_stages") <= _mean(table, "final_loss_only")

    def test_mean_padding(self, desk_split, desk_train):
        config, train_data, test_data = desk_split
        table = run_ablation("padding", config, desk_train, train_data, test_data, SEEDS)
        assert _mean(table, "mean_25") <= _mean(table, "last_pose")
        assert _mean(table, "mean_25") <= _mean(table, "mean_5")

    def test_aas_targets_beat_gaussian(self, desk_split, desk_train):
        config, train_data, test_data = desk_split
        table = run_ablation("targets", config, desk_train, train_data, test_data, SEEDS)
        assert _mean(table, "aas") <= _mean(table, "gaussian_21")
