"""
Tests for the ablation harness
"""

import pytest

from pgmotion.exceptions import ConfigError
from pgmotion.experiments import EXPERIMENTS, gcb_split, run_ablation, total_gcbs, variants_for
from pgmotion.models import CopyAxis, Supervision, TrainConfig
from pgmotion.network import count_parameters


class TestVariants:
    @pytest.mark.parametrize("stages,encoder,decoder", [(1, 6, 6), (2, 3, 3), (3, 2, 2), (4, 1, 2), (6, 1, 1)])
    def test_gcb_split(self, stages, encoder, decoder):
        split = gcb_split(stages)
        assert (split["encoder_gcbs"], split["decoder_gcbs"]) == (encoder, decoder)
        assert split["num_stages"] == stages

    @pytest.mark.parametrize("stages,total", [(1, 12), (2, 12), (3, 12), (4, 12), (5, 10), (6, 12)])
    def test_total_gcbs(self, tiny_config, stages, total):
        assert total_gcbs(tiny_config.model_copy(update=gcb_split(stages))) == total

    def test_baseline_first(self):
        for name in EXPERIMENTS:
            variants = variants_for(name)
            assert variants[0].name == "baseline"
            assert len({v.name for v in variants}) == len(variants)

    def test_stage_sweep(self):
        names = [v.name for v in variants_for("stages")[1:]]
        assert names == [f"stages_{t}" for t in range(1, 7)]

    def test_apply(self, tiny_config):
        variant = next(v for v in variants_for("copy") if v.name == "spatial_x1")
        model, train = variant.apply(tiny_config, TrainConfig())
        assert model.copy_axis == CopyAxis.SPATIAL
        assert model.joints == tiny_config.joints
        assert train.model_dump() == TrainConfig().model_dump()

    def test_supervision_variants(self, tiny_config):
        variant = next(v for v in variants_for("supervision") if v.name == "final_loss_only")
        _, train = variant.apply(tiny_config, TrainConfig())
        assert train.intermediate_supervision == Supervision.NONE

    def test_unknown(self):
        with pytest.raises(ConfigError):
            variants_for("nope")


class TestRunAblation:
    def test_table(self, tiny_config, tiny_dataset):
        cfg = TrainConfig(epochs=1, batch_size=8, horizons_ms=[40, 120])
        table = run_ablation("copy", tiny_config, cfg, tiny_dataset, tiny_dataset, seeds=[0, 1])
        assert list(table["variant"]) == [v.name for v in variants_for("copy")]
        assert {"parameters", "gcbs", "seeds", "40ms", "120ms", "mean", "delta_vs_baseline"} <= set(table.columns)
        assert table.loc[0, "delta_vs_baseline"] == 0.0
        assert table.loc[0, "parameters"] == count_parameters(tiny_config)
        assert table.loc[0, "gcbs"] == total_gcbs(tiny_config)
        assert (table["seeds"] == 2).all()
        assert (table["mean"] > 0).all()

    def test_needs_a_seed(self, tiny_config, tiny_dataset):
        with pytest.raises(ConfigError):
            run_ablation("copy", tiny_config, TrainConfig(epochs=1), tiny_dataset, tiny_dataset, seeds=[])
