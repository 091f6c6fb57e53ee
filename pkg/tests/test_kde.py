"""Good/bad kernel density model: splitting, densities, proposals."""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from multifid.configspace import DimensionKind
from multifid.kde import (BANDWIDTH_FACTOR, MIN_BANDWIDTH, N_SAMPLES,
                          RANDOM_FRACTION, SPLIT_QUANTILE, KdeModel, fit_tpe,
                          log_density, propose)

CONT = DimensionKind(kind="continuous")


def make_obs(points, losses):
    return [(np.asarray(p, dtype=float), float(l))
            for p, l in zip(points, losses)]


class TestConstants:
    def test_published_defaults(self):
        assert SPLIT_QUANTILE == 0.15
        assert RANDOM_FRACTION == pytest.approx(1.0 / 3.0)
        assert N_SAMPLES == 64
        assert BANDWIDTH_FACTOR == 3.0
        assert MIN_BANDWIDTH == 1e-3


class TestFitTpe:
    def test_split_sizes_d7_n20(self):
        rng = np.random.default_rng(0)
        obs = make_obs(rng.random((20, 7)), rng.random(20))
        model = fit_tpe(obs, budget=50, dimension_kinds=[CONT] * 7)
        # best max(ceil(0.15 * 20), 7 + 1) = 8 points are good
        assert len(model.good_points) == 8
        assert len(model.bad_points) == 12

    def test_good_side_holds_lowest_losses(self):
        rng = np.random.default_rng(1)
        pts = rng.random((30, 2))
        losses = np.arange(30, dtype=float)
        obs = make_obs(pts, losses)
        model = fit_tpe(obs, budget=12, dimension_kinds=[CONT] * 2)
        n_good = len(model.good_points)
        assert np.allclose(sorted(map(tuple, model.good_points)),
                           sorted(map(tuple, pts[:n_good])))

    def test_identical_points_floor_bandwidths(self):
        obs = make_obs([[0.4, 0.6]] * 10, np.linspace(0, 1, 10))
        model = fit_tpe(obs, budget=12, dimension_kinds=[CONT] * 2)
        assert np.all(model.good_bandwidths == MIN_BANDWIDTH)
        assert np.all(model.bad_bandwidths == MIN_BANDWIDTH)

    def test_too_few_observations(self):
        rng = np.random.default_rng(2)
        obs = make_obs(rng.random((3, 2)), rng.random(3))
        with pytest.raises(ValueError, match="too few"):
            fit_tpe(obs, budget=12, dimension_kinds=[CONT] * 2)

    def test_nonfinite_loss_rejected(self):
        rng = np.random.default_rng(3)
        obs = make_obs(rng.random((10, 2)), [0.1] * 9 + [float("nan")])
        with pytest.raises(ValueError, match="finite"):
            fit_tpe(obs, budget=12, dimension_kinds=[CONT] * 2)

    def test_bad_side_padded_to_d_plus_one(self):
        rng = np.random.default_rng(4)
        obs = make_obs(rng.random((8, 5)), rng.random(8))
        model = fit_tpe(obs, budget=12, dimension_kinds=[CONT] * 5)
        assert len(model.bad_points) >= 6

    def test_scott_rule_bandwidth_value(self):
        rng = np.random.default_rng(5)
        pts = rng.random((40, 1))
        obs = make_obs(pts, np.linspace(0, 1, 40))
        model = fit_tpe(obs, budget=12, dimension_kinds=[CONT])
        good = model.good_points
        expected = max(good.std(ddof=1) * len(good) ** (-1.0 / 5), MIN_BANDWIDTH)
        assert model.good_bandwidths[0] == pytest.approx(expected)


class TestLogDensity:
    def test_single_kernel_peak(self):
        model = fit_tpe(make_obs([[0.5]] * 4 + [[0.9]] * 4,
                                 [0, 0, 0, 0, 1, 1, 1, 1]),
                        budget=12, dimension_kinds=[CONT])
        bw = model.good_bandwidths[0]
        trunc = (stats.norm.cdf((1 - 0.5) / bw) - stats.norm.cdf((0 - 0.5) / bw))
        expected_peak = math.log(1.0 / (bw * math.sqrt(2 * math.pi))) - math.log(trunc)
        assert log_density(model, "good", np.array([0.5])) >= \
            math.log(1.0 / (bw * math.sqrt(2 * math.pi)))
        assert log_density(model, "good", np.array([0.5])) == \
            pytest.approx(expected_peak, rel=1e-9)

    def test_symmetric_midpoint(self):
        rng = np.random.default_rng(0)
        pts = [[0.3], [0.7]] * 5
        model = fit_tpe(make_obs(pts, rng.random(10)), budget=12,
                        dimension_kinds=[CONT])
        left = log_density(model, "good", np.array([0.5 - 0.05]))
        right = log_density(model, "good", np.array([0.5 + 0.05]))
        assert left == pytest.approx(right, rel=1e-9)

    def test_density_integrates_to_one_quadrature(self):
        rng = np.random.default_rng(6)
        pts = rng.random((12, 1))
        model = fit_tpe(make_obs(pts, rng.random(12)), budget=12,
                        dimension_kinds=[CONT])
        for side in ("good", "bad"):
            total, err = integrate.quad(
                lambda x: math.exp(log_density(model, side, np.array([x]))),
                0.0, 1.0, limit=200)
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_categorical_kernel_sums_to_one(self):
        cat = DimensionKind(kind="categorical", n_cells=4)
        rng = np.random.default_rng(7)
        pts = [[(rng.integers(4) + 0.5) / 4] for _ in range(10)]
        model = fit_tpe(make_obs(pts, rng.random(10)), budget=12,
                        dimension_kinds=[cat])
        total = sum(math.exp(log_density(model, "good",
                                         np.array([(c + 0.5) / 4])))
                    for c in range(4))
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_length_mismatch(self):
        rng = np.random.default_rng(8)
        model = fit_tpe(make_obs(rng.random((10, 2)), rng.random(10)),
                        budget=12, dimension_kinds=[CONT] * 2)
        with pytest.raises(ValueError):
            log_density(model, "good", np.array([0.5]))

    def test_unknown_side(self):
        rng = np.random.default_rng(9)
        model = fit_tpe(make_obs(rng.random((10, 1)), rng.random(10)),
                        budget=12, dimension_kinds=[CONT])
        with pytest.raises(ValueError):
            log_density(model, "ugly", np.array([0.5]))


class TestPropose:
    def test_proposals_in_unit_cube(self):
        rng = np.random.default_rng(0)
        model = fit_tpe(make_obs(rng.random((20, 3)), rng.random(20)),
                        budget=12, dimension_kinds=[CONT] * 3)
        for seed in range(50):
            p = propose(model, np.random.default_rng(seed))
            assert p.shape == (3,)
            assert np.all(p >= 0) and np.all(p <= 1)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(1)
        model = fit_tpe(make_obs(rng.random((20, 2)), rng.random(20)),
                        budget=12, dimension_kinds=[CONT] * 2)
        a = propose(model, np.random.default_rng(123))
        b = propose(model, np.random.default_rng(123))
        assert np.array_equal(a, b)

    def test_good_region_preferred(self):
        rng = np.random.default_rng(2)
        good = 0.1 + 0.02 * rng.standard_normal((10, 1))
        bad = 0.9 + 0.02 * rng.standard_normal((10, 1))
        pts = np.clip(np.concatenate([good, bad]), 0, 1)
        losses = np.concatenate([np.zeros(10), np.ones(10)])
        model = fit_tpe(make_obs(pts, losses), budget=12,
                        dimension_kinds=[CONT])
        hits = sum(propose(model, np.random.default_rng(s))[0] < 0.5
                   for s in range(1000))
        assert hits >= 990

    def test_n_samples_one_returns_single_draw(self):
        rng = np.random.default_rng(3)
        model = fit_tpe(make_obs(rng.random((12, 2)), rng.random(12)),
                        budget=12, dimension_kinds=[CONT] * 2)
        p = propose(model, np.random.default_rng(7), n_samples=1)
        assert np.all((0 <= p) & (p <= 1))

    def test_acquisition_pulls_left_on_linear_loss(self):
        # loss(x) = x: proposals should concentrate below the uniform mean
        means = []
        for rep in range(200):
            rng = np.random.default_rng(rep)
            xs = rng.random((30, 1))
            model = fit_tpe(make_obs(xs, xs[:, 0]), budget=12,
                            dimension_kinds=[CONT])
            means.append(propose(model, rng)[0])
        t = (np.mean(means) - 0.5) / (np.std(means, ddof=1) / math.sqrt(len(means)))
        assert np.mean(means) < 0.5
        assert t < -2.5  # one-sided p < 0.01
