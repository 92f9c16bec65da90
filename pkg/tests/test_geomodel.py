import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdrfm.core import Pose2D, RfObservation, Step, Trajectory
from crowdrfm.geomodel import (
    MEAN_FACTOR,
    VAR_FACTOR,
    GeoModel,
    InsufficientDataError,
    PairSample,
    SimilarityBin,
    bin_index,
    bin_samples,
    estimate_zeta,
    fit_log_linear,
    predict,
    rayleigh_moments,
    sample_pairs,
)


def _rf_traj(tid, n_rf, spacing=1.0):
    steps = []
    for k in range(n_rf):
        steps.append(Step(Pose2D(k * spacing, 0.0), RfObservation({"a": -40.0 - 3 * k, "b": -60.0}), float(k)))
    return Trajectory(tid, 0, tuple(steps))


class TestMoments:
    def test_constants(self):
        assert abs(MEAN_FACTOR - math.sqrt(math.pi / 2)) <= 1e-15
        assert abs(VAR_FACTOR - (4 - math.pi) / 2) <= 1e-15
        mu, var = rayleigh_moments(1.0)
        assert abs(mu - math.sqrt(math.pi / 2)) <= 1e-12
        assert abs(var - (4 - math.pi) / 2) <= 1e-12

    def test_zeta_two(self):
        model = GeoModel(math.log(2.0), 0.0)
        mu, var = predict(model, 0.3)
        assert abs(mu - 2.5066282746310002) < 1e-12
        assert abs(var - 1.7168146928204138) < 1e-12

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-3, 5), st.floats(-8, 8), st.floats(0, 1))
    def test_ratio_and_positivity(self, w0, w1, s):
        mu, var = predict(GeoModel(w0, w1), s)
        assert mu > 0 and var > 0
        assert abs(var / mu**2 - (4 - math.pi) / math.pi) < 1e-12

    def test_monotone_for_negative_slope(self):
        m = GeoModel(2.0, -3.0)
        assert predict(m, 0.9)[0] < predict(m, 0.4)[0]

    def test_out_of_range_similarity(self):
        with pytest.raises(ValueError):
            predict(GeoModel(0, 0), 1.2)

    def test_json_roundtrip(self):
        m = GeoModel(1.25, -3.5, 12, 4000, "kde", 1.0, 10.0)
        assert GeoModel.from_json(m.to_json()) == m


class TestSampling:
    def test_single_pair(self):
        s = sample_pairs([_rf_traj("T", 2, spacing=3.0)], n_per_traj=1, seed=0)
        assert len(s) == 1 and s[0].distance == 3.0

    def test_deterministic_and_counts(self):
        trajs = [_rf_traj(f"T{i}", 6) for i in range(10)]
        a = sample_pairs(trajs, 100, seed=5)
        assert len(a) == 1000
        assert a == sample_pairs(trajs, 100, seed=5)
        assert all(x.distance > 0 for x in a)  # no i == j pairs

    def test_short_trajectory_skipped(self):
        assert sample_pairs([_one_rf()], 10) == []

    def test_pair_sample_validation(self):
        with pytest.raises(ValueError):
            PairSample(-1.0, 0.5)
        with pytest.raises(ValueError):
            PairSample(1.0, 1.5)


def _one_rf():
    return Trajectory("T", 0, (Step(Pose2D(0, 0), RfObservation({"a": -50}), 0.0), Step(Pose2D(1, 0), None, 1.0)))


class TestBinning:
    def test_centers(self):
        assert bin_index(0.3, 2) == 0 and bin_index(0.7, 2) == 1
        assert bin_index(1.0, 10) == 9

    def test_boundary_goes_to_last_bin(self):
        bins = bin_samples([PairSample(1.0, 1.0)] * 3, n_bins=10, min_count=1)
        assert len(bins) == 1 and abs(bins[0].center - 0.95) < 1e-12
        assert abs(bins[0].half_width - 0.05) < 1e-12

    def test_uniform_fill(self):
        rng = np.random.default_rng(0)
        samples = [PairSample(1.0, float(s)) for s in rng.uniform(0, 1, 1000)]
        bins = bin_samples(samples, 20, 30)
        assert len(bins) == 20
        assert sum(b.count for b in bins) == 1000

    def test_sparse_bins_dropped(self):
        samples = [PairSample(1.0, 0.1)] * 40 + [PairSample(1.0, 0.9)] * 5
        bins = bin_samples(samples, 10, 30)
        assert [round(b.center, 3) for b in bins] == [0.15]

    def test_all_sparse(self):
        with pytest.raises(InsufficientDataError):
            bin_samples([PairSample(1.0, 0.5)], 20, 30)


class TestEstimation:
    def test_mle_two_ones(self):
        assert abs(estimate_zeta([1.0, 1.0]) - math.sqrt(0.5)) < 1e-15

    def test_all_zero(self):
        assert estimate_zeta([0.0, 0.0, 0.0]) == 0.0
        assert estimate_zeta([0.0, 0.0], "kde") == 0.0

    def test_mle_recovers_scale(self):
        d = np.random.default_rng(12345).rayleigh(3.0, 10_000)
        assert 2.94 <= estimate_zeta(d) <= 3.06

    def test_mle_matches_closed_form_oracle(self):
        # independent route: maximize the Rayleigh log-likelihood numerically
        d = np.random.default_rng(1).rayleigh(1.7, 500)
        grid = np.linspace(1.0, 2.5, 150_001)
        ll = np.log(d[:, None] / grid**2).sum(0) - (d**2).sum() / (2 * grid**2)
        assert abs(estimate_zeta(d) - grid[np.argmax(ll)]) < 2e-5

    def test_kde_close_to_mode(self):
        d = np.random.default_rng(2).rayleigh(2.0, 5000)
        assert abs(estimate_zeta(d, "kde") - 2.0) < 0.25

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            estimate_zeta([])
        with pytest.raises(ValueError):
            estimate_zeta([-1.0])
        with pytest.raises(ValueError):
            estimate_zeta([1.0], "median")


class TestFit:
    @staticmethod
    def _bin(center, zeta, n=2):
        # MLE of n equal distances d is d / sqrt(2)
        return SimilarityBin(center, 0.05, (zeta * math.sqrt(2),) * n)

    def test_two_point_line(self):
        m = fit_log_linear([self._bin(0.2, math.e), self._bin(0.8, math.exp(0.4))])
        assert abs(m.w0 - 1.2) < 1e-12 and abs(m.w1 + 1.0) < 1e-12

    def test_constant(self):
        m = fit_log_linear([self._bin(c, math.exp(2.0)) for c in (0.1, 0.5, 0.9)])
        assert abs(m.w0 - 2.0) < 1e-12 and abs(m.w1) < 1e-12

    def test_weights_by_count(self):
        # three bins off a line: heavier bins pull the fit towards themselves
        bins = [self._bin(0.1, math.exp(1.0), 100), self._bin(0.5, math.exp(0.0), 1), self._bin(0.9, math.exp(1.0), 100)]
        m = fit_log_linear(bins)
        assert abs(m.w1) < 1e-9 and m.w0 > 0.99

    def test_needs_two_bins(self):
        with pytest.raises(InsufficientDataError):
            fit_log_linear([self._bin(0.5, 1.0)])
