"""Tests for the linear-domain similarity metrics.

Hand-derived values: the two-element si_mse example is certified against
a scan over candidate scales, the 2x2 windowed error is worked from the
definition, and the uniform 0-vs-1 DSSIM value follows directly from the
SSIM formula with the pinned stabilizer constants.
"""

import numpy as np
import pytest

from softlambert.metrics import (
    DSSIM_C1,
    MetricReport,
    default_lmse_window,
    dssim,
    lmse,
    score_images,
    si_mse,
)


class TestSiMse:
    def test_zero_on_identical(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0.1, 1.0, size=(5, 7, 3))
        assert si_mse(x, x) == 0.0

    def test_zero_on_scaled_copy(self):
        rng = np.random.default_rng(1)
        t = rng.uniform(0.1, 1.0, size=(5, 7, 3))
        assert si_mse(2.0 * t, t) == pytest.approx(0.0, abs=1e-15)

    def test_two_element_example_with_scan_oracle(self):
        pred = np.array([[1.0, 0.0]])
        truth = np.array([[1.0, 1.0]])
        value = si_mse(pred, truth)
        assert value == pytest.approx(0.5, rel=1e-12)
        # Certify against a dense scan over the scale.
        scan = min(((s * pred - truth) ** 2).mean()
                   for s in np.linspace(-3, 3, 60001))
        assert value == pytest.approx(scan, abs=1e-8)

    def test_scale_invariance_in_prediction(self):
        rng = np.random.default_rng(2)
        p = rng.uniform(0.1, 1.0, size=(6, 6, 3))
        t = rng.uniform(0.1, 1.0, size=(6, 6, 3))
        base = si_mse(p, t)
        for c in (0.1, 3.0, 250.0):
            assert abs(si_mse(c * p, t) - base) <= 1e-12 * max(1.0, base)

    def test_zero_prediction_scores_target_energy(self):
        t = np.full((2, 2, 1), 0.5)
        assert si_mse(np.zeros((2, 2, 1)), t) == pytest.approx(0.25)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            si_mse(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_nonfinite_rejected(self):
        bad = np.array([[np.nan, 0.0]])
        with pytest.raises(ValueError):
            si_mse(bad, np.ones((1, 2)))


class TestLmse:
    def test_zero_on_identical(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(0.1, 1.0, size=(8, 8, 3))
        assert lmse(x, x, window=4, stride=2) == pytest.approx(0.0, abs=1e-15)

    def test_per_window_scaling_scores_zero(self):
        # Non-overlapping windows each get their own scale, so a prediction
        # that is a different multiple of the truth in each window is perfect.
        rng = np.random.default_rng(4)
        t = rng.uniform(0.1, 1.0, size=(4, 4, 3))
        p = t.copy()
        scales = iter((0.5, 2.0, 3.0, 0.25))
        for i in (0, 2):
            for j in (0, 2):
                p[i:i + 2, j:j + 2, :] *= next(scales)
        assert lmse(p, t, window=2, stride=2) == pytest.approx(0.0, abs=1e-15)

    def test_two_by_two_worked_example(self):
        # Single 2x2 window: s* = <p,t>/<p,p> = 1, residual (0,-1,-1,-1),
        # so the normalized error is 3/4.
        pred = np.array([[1.0, 0.0], [0.0, 0.0]])
        truth = np.ones((2, 2))
        assert lmse(pred, truth, window=2, stride=2) == pytest.approx(0.75, rel=1e-12)

    def test_single_window_degenerates_to_normalized_si_mse(self):
        rng = np.random.default_rng(5)
        p = rng.uniform(0.1, 1.0, size=(4, 6, 3))
        t = rng.uniform(0.1, 1.0, size=(4, 6, 3))
        big = max(p.shape[:2])
        got = lmse(p, t, window=big, stride=big)
        want = si_mse(p, t) / (t * t).mean()
        assert got == pytest.approx(want, rel=1e-12)

    def test_edge_windows_are_clipped(self):
        # 3x3 with window 2 stride 2 visits windows at 0 and 2; the ones at
        # index 2 are 1 pixel wide. A prediction wrong only in the corner
        # pixel is still seen by the clipped windows.
        t = np.ones((3, 3))
        p = t.copy()
        p[2, 2] = 0.0
        assert lmse(p, t, window=2, stride=2) > 0.0

    def test_window_and_stride_validation(self):
        x = np.ones((4, 4))
        with pytest.raises(ValueError):
            lmse(x, x, window=1, stride=1)
        with pytest.raises(ValueError):
            lmse(x, x, window=2, stride=0)
        with pytest.raises(ValueError):
            lmse(x, x, window=5, stride=2)

    def test_default_window_rule(self):
        assert default_lmse_window(4, 4) == 2
        assert default_lmse_window(20, 30) == 3
        assert default_lmse_window(100, 50) == 10

    def test_zero_truth_scores_zero(self):
        p = np.ones((4, 4))
        t = np.zeros((4, 4))
        assert lmse(p, t, window=2, stride=2) == 0.0


class TestDssim:
    def test_zero_on_identical(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(0.0, 1.0, size=(16, 16, 3))
        assert dssim(x, x) == pytest.approx(0.0, abs=1e-12)

    def test_zero_on_equal_constants(self):
        a = np.full((16, 16), 0.4)
        assert dssim(a, a.copy()) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_zero_versus_one(self):
        # mu_x = 0, mu_y = 1, all (co)variances 0: SSIM = C1/(1 + C1)
        # exactly, so DSSIM = (1 - C1/(1+C1)) / 2.
        p = np.zeros((16, 16))
        t = np.ones((16, 16))
        expect = (1.0 - DSSIM_C1 / (1.0 + DSSIM_C1)) / 2.0
        assert dssim(p, t) == pytest.approx(expect, abs=1e-12)
        assert dssim(p, t) == pytest.approx(0.49995, abs=1e-4)

    def test_flip_invariance(self):
        rng = np.random.default_rng(7)
        p = rng.uniform(0.0, 1.0, size=(12, 14, 3))
        t = rng.uniform(0.0, 1.0, size=(12, 14, 3))
        base = dssim(p, t)
        assert abs(dssim(p[::-1], t[::-1]) - base) < 1e-12
        assert abs(dssim(p[:, ::-1], t[:, ::-1]) - base) < 1e-12

    def test_range_and_symmetric_zero(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            p = rng.uniform(0.0, 1.0, size=(10, 10))
            t = rng.uniform(0.0, 1.0, size=(10, 10))
            v = dssim(p, t)
            assert 0.0 <= v <= 1.0

    def test_out_of_range_values_are_clipped(self):
        rng = np.random.default_rng(9)
        t = rng.uniform(0.0, 1.0, size=(10, 10))
        p = rng.uniform(0.0, 1.0, size=(10, 10))
        wild = p.copy()
        wild[0, 0] = 5.0
        clipped = p.copy()
        clipped[0, 0] = 1.0
        assert dssim(wild, t) == dssim(clipped, t)

    def test_channel_mean(self):
        rng = np.random.default_rng(10)
        chans = [rng.uniform(0, 1, size=(12, 12)) for _ in range(3)]
        target = [rng.uniform(0, 1, size=(12, 12)) for _ in range(3)]
        stacked = dssim(np.stack(chans, axis=2), np.stack(target, axis=2))
        singles = [dssim(c, t) for c, t in zip(chans, target)]
        assert stacked == pytest.approx(np.mean(singles), rel=1e-12)


class TestMetricReport:
    def test_score_images_aggregates_means(self):
        rng = np.random.default_rng(11)
        pairs = [(rng.uniform(0.1, 1, size=(8, 8, 3)),
                  rng.uniform(0.1, 1, size=(8, 8, 3))) for _ in range(3)]
        report = score_images(pairs, window=4, stride=2)
        assert len(report.per_image) == 3
        assert report.mse == pytest.approx(np.mean([r[0] for r in report.per_image]))
        assert report.lmse == pytest.approx(np.mean([r[1] for r in report.per_image]))
        assert report.dssim == pytest.approx(np.mean([r[2] for r in report.per_image]))

    def test_mismatched_aggregate_rejected(self):
        with pytest.raises(ValueError):
            MetricReport(mse=1.0, lmse=0.0, dssim=0.0,
                         per_image=[(0.5, 0.0, 0.0)])

    def test_empty_report_rejected(self):
        with pytest.raises(ValueError):
            MetricReport(mse=0.0, lmse=0.0, dssim=0.0, per_image=[])
