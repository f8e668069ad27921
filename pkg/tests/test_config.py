"""
Tests for run settings loading and command-line overrides
"""

import pytest

from pgmotion.core.config import RunSettings, merge_overrides, parse_overrides
from pgmotion.exceptions import ConfigError
from pgmotion.models import CopyAxis, ModelConfig, Supervision


@pytest.fixture
def ini(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(
        "[model]\nnum_stages = 3\nfeatures = 8\ncopy_axis = spatial\n\n"
        "[train]\nepochs = 5\nintermediate_supervision = gaussian\nhorizons_ms = 80,160\n\n"
        "[run]\nlog_level = debug\n"
    )
    return path


class TestRunSettings:
    def test_defaults(self):
        settings = RunSettings.load()
        assert settings.model.model_dump() == ModelConfig().model_dump()
        assert settings.train.lr0 == 0.005
        assert settings.run.out == "runs/default"

    def test_file_values(self, ini):
        settings = RunSettings.load(ini)
        assert settings.model.num_stages == 3
        assert settings.model.copy_axis == CopyAxis.SPATIAL
        assert settings.train.intermediate_supervision == Supervision.GAUSSIAN
        assert settings.train.horizons_ms == [80, 160]
        assert settings.run.log_level == "DEBUG"
        assert settings.model.t_f == 25

    def test_overrides_beat_file(self, ini):
        settings = RunSettings.load(ini, parse_overrides(["train.epochs=0", "model.features=4"]))
        assert settings.train.epochs == 0
        assert settings.model.features == 4
        assert settings.model.num_stages == 3
        assert settings.train.intermediate_supervision == Supervision.GAUSSIAN

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[model]\nstagez = 3\n")
        with pytest.raises(ConfigError) as exc:
            RunSettings.load(path)
        assert "stagez" in exc.value.details["field"]
        assert exc.value.exit_code == 1

    def test_unknown_section(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[optimizer]\nlr = 1\n")
        with pytest.raises(ConfigError):
            RunSettings.load(path)

    def test_invalid_value(self):
        with pytest.raises(ConfigError) as exc:
            RunSettings.load(overrides={"model": {"copy_count": "2"}})
        assert exc.value.details["field"].startswith("model")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            RunSettings.load(tmp_path / "absent.ini")

    def test_shipped_configs_load(self):
        from pathlib import Path
        root = Path(__file__).resolve().parent.parent / "configs"
        for path in sorted(root.glob("*.ini")):
            RunSettings.load(path)


class TestOverrides:
    def test_parse(self):
        assert parse_overrides(["train.epochs=0", "model.t_f = 10", "train.lr0=0.01"]) == {
            "train": {"epochs": "0", "lr0": "0.01"},
            "model": {"t_f": "10"},
        }

    @pytest.mark.parametrize("item", ["epochs=0", "train.epochs", "train.=1"])
    def test_malformed(self, item):
        with pytest.raises(ConfigError):
            parse_overrides([item])

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            parse_overrides(["optim.lr=1"])

    def test_merge_later_wins(self):
        merged = merge_overrides({"train": {"epochs": 1, "seed": 3}}, {"train": {"epochs": 2}})
        assert merged == {"train": {"epochs": 2, "seed": 3}}
