"""
Tests for MPJPE, MAE and horizon reports
"""

import numpy as np
import pytest

from pgmotion.exceptions import EmptyDatasetError, HorizonError, ShapeError
from pgmotion.metrics import (
    horizon_report,
    horizon_to_frame,
    mae_at,
    mpjpe_at,
    per_frame_errors,
    per_joint_mpjpe,
    usable_horizons,
)
from pgmotion.models import Metric


@pytest.fixture
def future(rng):
    return rng.normal(size=(3, 25, 4, 3))


class TestMpjpe:
    def test_zero_on_equality(self, future):
        assert mpjpe_at(future, future, 5) == 0.0

    def test_uniform_offset(self, future):
        assert mpjpe_at(future + np.array([1.0, 2.0, 2.0]), future, 1) == pytest.approx(3.0)

    def test_frame_out_of_range(self, future):
        with pytest.raises(ShapeError):
            mpjpe_at(future, future, 26)
        with pytest.raises(ShapeError):
            mpjpe_at(future, future, 0)

    def test_rotation_invariance(self, rng, future):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        pred = future + rng.normal(size=future.shape)
        assert mpjpe_at(pred @ q.T, future @ q.T, 7) == pytest.approx(mpjpe_at(pred, future, 7), abs=1e-6)

    def test_shape_mismatch(self, future):
        with pytest.raises(ShapeError):
            mpjpe_at(future, future[:, :10], 1)

    def test_per_joint(self, future):
        pred = future.copy()
        pred[:, :, 2] += np.array([0.0, 3.0, 4.0])
        np.testing.assert_allclose(per_joint_mpjpe(pred, future), [0.0, 0.0, 5.0, 0.0])


class TestMae:
    def test_zero_on_equality(self, future):
        assert mae_at(future, future, 3) == 0.0

    def test_uniform_offset(self, future):
        assert mae_at(future + 0.5, future, 3) == pytest.approx(0.5)

    def test_mixed_offsets(self):
        gt = np.zeros((1, 1, 1, 2))
        pred = np.array([0.2, -0.4]).reshape(1, 1, 1, 2)
        assert mae_at(pred, gt, 1) == pytest.approx(0.3)


class TestHorizons:
    def test_short_term_grid(self):
        assert [horizon_to_frame(h, 25) for h in (80, 160, 320, 400)] == [2, 4, 8, 10]

    def test_one_second_boundary(self):
        assert horizon_to_frame(1000, 25, t_f=25) == 25

    def test_non_integral_rejected(self):
        with pytest.raises(HorizonError) as exc:
            horizon_to_frame(100, 25)
        assert exc.value.details["horizon_ms"] == 100

    def test_beyond_prediction_rejected(self):
        with pytest.raises(HorizonError):
            horizon_to_frame(1040, 25, t_f=25)

    def test_usable_filters(self):
        assert usable_horizons([80, 100, 400, 1000], 25, 10) == [80, 400]


class TestHorizonReport:
    def test_frames_and_zero_errors(self, future):
        report = horizon_report(future, future, [80, 160, 320, 400], 25)
        assert report.frames == [2, 4, 8, 10]
        assert report.errors == [0.0] * 4
        assert report.average == 0.0
        assert report.samples == 3

    def test_average_is_all_frame_mean(self, rng, future):
        pred = future + rng.normal(size=future.shape)
        report = horizon_report(pred, future, [1000], 25)
        curve = per_frame_errors(pred, future)
        assert abs(report.average - curve.mean()) < 1e-10
        assert report.errors[0] == pytest.approx(mpjpe_at(pred, future, 25))

    def test_mae_report(self, future):
        report = horizon_report(future + 0.25, future, [40], 25, metric=Metric.MAE)
        assert report.errors[0] == pytest.approx(0.25)

    def test_rows(self, future):
        rows = horizon_report(future, future, [80], 25, stage=2).rows()
        assert rows[0] == {"stage": 2, "horizon_ms": 80, "value": 0.0}
        assert rows[-1]["horizon_ms"] == "all_frames_mean"

    def test_bad_horizon_names_offender(self, future):
        with pytest.raises(HorizonError) as exc:
            horizon_report(future, future, [80, 90], 25)
        assert "90" in str(exc.value)

    def test_no_windows(self):
        empty = np.zeros((0, 25, 4, 3))
        with pytest.raises(EmptyDatasetError) as exc:
            horizon_report(empty, empty, [80], 25)
        assert exc.value.exit_code == 2
