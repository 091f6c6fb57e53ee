"""Rank correlations, forest surrogate, importance scores, heatmaps."""

import math

import numpy as np
import pytest
from scipy import stats

from multifid import fixture_path, load_space
from multifid.analysis import (budget_correlation, fanova_first_order,
                               fit_forest, lpi, performance_heatmap, spearman)
from multifid.configspace import parse_space
from multifid.executor import SyntheticCurveObjective, load_replay


def toy_space(d):
    return parse_space({"name": f"toy{d}", "hyperparameters": [
        {"name": f"x{j + 1}", "type": "float", "range": [0.0, 1.0],
         "default": 0.5} for j in range(d)]})


class TestSpearman:
    def test_monotone_one(self):
        assert spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)

    def test_reversed_minus_one(self):
        assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_hand_value(self):
        assert spearman([1, 2, 3, 4], [2, 1, 4, 3]) == pytest.approx(0.6)

    def test_constant_input_undefined(self):
        assert math.isnan(spearman([1, 1, 1], [1, 2, 3]))

    def test_matches_scipy_with_ties(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(3, 30))
            # quantize to force ties
            x = np.round(rng.random(n), 1)
            y = np.round(rng.random(n), 1)
            if np.all(x == x[0]) or np.all(y == y[0]):
                continue
            expected = stats.spearmanr(x, y).statistic
            assert spearman(x, y) == pytest.approx(expected, abs=1e-12)

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            x = rng.random(25)
            y = rng.random(25)
            base = spearman(x, y)
            assert spearman(np.exp(3 * x), y) == pytest.approx(base, abs=1e-12)
            assert spearman(x, y ** 3 + 2 * y) == pytest.approx(base, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            spearman([1, 2], [1, 2, 3])


class TestBudgetCorrelation:
    def test_synthetic_regime(self):
        obj = SyntheticCurveObjective(noise=False)
        rng = np.random.default_rng(2)
        configs = [obj.space.sample_uniform(rng) for _ in range(500)]
        rho = spearman([obj.loss_at(c, 12, 0) for c in configs],
                       [obj.loss_at(c, 50, 0) for c in configs])
        assert rho >= 0.8

    def test_identical_budgets_one(self):
        bundle = load_replay(fixture_path("mini_lcbench/adult.json"))
        report = budget_correlation(bundle, (25, 25))
        assert report.mean == pytest.approx(1.0)

    def test_multiple_datasets_aggregated(self):
        bundles = [load_replay(fixture_path(f"mini_lcbench/{n}.json"))
                   for n in ("adult", "higgs", "vehicle")]
        report = budget_correlation(bundles, (12, 50))
        assert len(report.per_dataset) == 3
        vals = np.array(list(report.per_dataset.values()))
        assert report.mean == pytest.approx(float(vals.mean()))
        assert report.std == pytest.approx(float(vals.std()))
        assert all(-1.0 <= v <= 1.0 for v in vals)

    def test_adaptive_and_cross_modes(self):
        bundle = load_replay(fixture_path("mini_lcbench/higgs.json"))
        for mode in ("adaptive", "cross"):
            report = budget_correlation(bundle, (12, 50), mode=mode)
            assert report.mode == mode
            assert -1.0 <= report.mean <= 1.0

    def test_insufficient_overlap_rejected(self, tmp_path):
        import json
        doc = {"dataset": "tiny", "b_max": 2, "space_inline": {
            "name": "s", "hyperparameters": [
                {"name": "x", "type": "float", "range": [0, 1],
                 "default": 0.5}]},
               "records": [{"config": {"x": 0.1 * i}, "seed": 0,
                            "val_curve": [0.5, 0.6]} for i in range(5)]}
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="insufficient"):
            budget_correlation(load_replay(str(path)), (1, 2))


class TestForest:
    def test_constant_target(self):
        rng = np.random.default_rng(3)
        X = rng.random((50, 2))
        surrogate = fit_forest(X, np.full(50, 3.0), rng=np.random.default_rng(0))
        assert np.allclose(surrogate.predict(rng.random((20, 2))), 3.0)

    def test_linear_target_oob(self):
        rng = np.random.default_rng(4)
        X = rng.random((500, 2))
        surrogate = fit_forest(X, X[:, 0], rng=np.random.default_rng(0))
        assert surrogate.oob_rmse < 0.05

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(5)
        X = rng.random((60, 3))
        y = X.sum(axis=1)
        q = rng.random((10, 3))
        a = fit_forest(X, y, rng=np.random.default_rng(7)).predict(q)
        b = fit_forest(X, y, rng=np.random.default_rng(7)).predict(q)
        assert np.array_equal(a, b)

    def test_too_few_samples_rejected(self):
        rng = np.random.default_rng(6)
        with pytest.raises(ValueError):
            fit_forest(rng.random((10, 2)), rng.random(10))


def quadrature_importance(surrogate, grid=64):
    """Dense-grid marginalization oracle for first-order variance shares."""
    d = surrogate.dim
    axes = [np.linspace(0, 1, grid) for _ in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    shares = {}
    per_tree = []
    for tree in surrogate.trees:
        values = np.array([tree.predict_one(p) for p in pts]).reshape(
            *([grid] * d))
        total = float(values.var())
        tree_shares = []
        for j in range(d):
            other = tuple(k for k in range(d) if k != j)
            marginal = values.mean(axis=other)
            tree_shares.append(float(marginal.var()) / total if total > 0
                               else 0.0)
        per_tree.append(tree_shares)
    arr = np.array(per_tree)
    for j in range(d):
        shares[f"x{j + 1}"] = float(arr[:, j].mean())
    return shares


class TestFanova:
    def test_single_relevant_dim(self):
        rng = np.random.default_rng(7)
        X = rng.random((400, 2))
        surrogate = fit_forest(X, X[:, 0], rng=np.random.default_rng(0))
        report = fanova_first_order(surrogate)
        assert report.scores["x1"] >= 0.9
        assert report.scores["x2"] <= 0.05

    def test_constant_all_zero(self):
        rng = np.random.default_rng(8)
        X = rng.random((60, 2))
        surrogate = fit_forest(X, np.zeros(60), rng=np.random.default_rng(0))
        report = fanova_first_order(surrogate)
        assert report.degenerate
        assert all(v == 0.0 for v in report.scores.values())

    def test_symmetric_sum(self):
        rng = np.random.default_rng(9)
        X = rng.random((400, 2))
        surrogate = fit_forest(X, X[:, 0] + X[:, 1],
                               rng=np.random.default_rng(0))
        report = fanova_first_order(surrogate)
        assert abs(report.scores["x1"] - report.scores["x2"]) < 0.1

    def test_fractions_in_unit_interval(self):
        rng = np.random.default_rng(10)
        X = rng.random((200, 3))
        y = np.sin(3 * X[:, 0]) + X[:, 1] * X[:, 2]
        report = fanova_first_order(
            fit_forest(X, y, rng=np.random.default_rng(0)))
        assert all(0.0 <= v <= 1.0 for v in report.scores.values())

    def test_agrees_with_quadrature_oracle(self):
        rng = np.random.default_rng(11)
        X = rng.random((200, 2))
        y = X[:, 0] ** 2 + 0.3 * X[:, 1]
        surrogate = fit_forest(X, y, n_trees=8, rng=np.random.default_rng(0))
        report = fanova_first_order(surrogate)
        oracle = quadrature_importance(surrogate, grid=64)
        for name in ("x1", "x2"):
            assert report.scores[name] == pytest.approx(oracle[name], abs=0.05)

    def test_invariant_under_affine_rescale(self):
        rng = np.random.default_rng(12)
        X = rng.random((300, 2))
        y = X[:, 0] + 0.5 * X[:, 1]
        a = fanova_first_order(fit_forest(X, y, rng=np.random.default_rng(0)))
        b = fanova_first_order(fit_forest(X, 10 * y + 3,
                                          rng=np.random.default_rng(0)))
        for name in a.scores:
            # near-tied splits may flip under floating-point rescaling, so the
            # agreement is tight but not bit-exact
            assert a.scores[name] == pytest.approx(b.scores[name], abs=0.02)


class TestLpi:
    def test_unused_dimension_zero(self):
        space = toy_space(2)
        report = lpi(space, lambda c: (c["x1"] - 0.5) ** 2,
                     {"x1": 0.5, "x2": 0.3})
        assert report.scores["x1"] == pytest.approx(1.0)
        assert report.scores["x2"] == pytest.approx(0.0)

    def test_symmetric_split(self):
        space = toy_space(2)
        report = lpi(space,
                     lambda c: (c["x1"] - 0.5) ** 2 + (c["x2"] - 0.5) ** 2,
                     {"x1": 0.5, "x2": 0.5})
        assert report.scores["x1"] == pytest.approx(0.5)
        assert report.scores["x2"] == pytest.approx(0.5)

    def test_scores_sum_to_one(self):
        space = toy_space(3)
        rng = np.random.default_rng(13)
        report = lpi(space,
                     lambda c: c["x1"] * 2 + math.sin(c["x2"]) + c["x3"] ** 2,
                     {f"x{j}": float(rng.random()) for j in (1, 2, 3)})
        assert sum(report.scores.values()) == pytest.approx(1.0)

    def test_degenerate_uniform(self):
        space = toy_space(2)
        report = lpi(space, lambda c: 7.0, {"x1": 0.5, "x2": 0.5})
        assert report.degenerate
        assert sum(report.scores.values()) == pytest.approx(1.0)

    def test_inactive_child_excluded(self):
        space = parse_space({"name": "cond", "hyperparameters": [
            {"name": "kind", "type": "cat", "range": ["a", "b"],
             "default": "a"},
            {"name": "knob", "type": "float", "range": [0.0, 1.0],
             "default": 0.5,
             "condition": {"parent": "kind", "values": ["b"]}},
            {"name": "level", "type": "float", "range": [0.0, 1.0],
             "default": 0.5}]})
        report = lpi(space, lambda c: c["level"] ** 2 + (0.0 if "knob" not in c
                                                        else c["knob"]),
                     {"kind": "a", "level": 0.4})
        assert report.scores["knob"] == 0.0
        assert report.scores["kind"] + report.scores["level"] == \
            pytest.approx(1.0)

    def test_small_grid_rejected(self):
        space = toy_space(1)
        with pytest.raises(ValueError):
            lpi(space, lambda c: c["x1"], {"x1": 0.5}, grid_size=2)


class TestHeatmap:
    def test_rows_sorted_by_mean(self):
        acc = np.array([[0.2, 0.4], [0.9, 0.7]])
        artifact = performance_heatmap(acc, ["c0", "c1"], ["d0", "d1"])
        assert artifact.config_ids == ["c1", "c0"]
        assert artifact.accuracy[0].mean() >= artifact.accuracy[1].mean()

    def test_regret_min_per_column_zero(self):
        rng = np.random.default_rng(14)
        acc = rng.random((6, 4))
        artifact = performance_heatmap(acc, [f"c{i}" for i in range(6)],
                                       [f"d{j}" for j in range(4)])
        assert np.allclose(artifact.regret.min(axis=0), 0.0)

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            performance_heatmap(np.array([[0.5, 0.6]]), ["c0"], ["d0", "d1"])

    def test_csv_and_svg_outputs(self, tmp_path):
        rng = np.random.default_rng(15)
        acc = rng.random((3, 3))
        artifact = performance_heatmap(acc, list("abc"), list("xyz"))
        artifact.write_csv(str(tmp_path / "acc.csv"),
                           str(tmp_path / "reg.csv"))
        assert (tmp_path / "acc.csv").read_text().splitlines()[0].startswith(
            "config,")
        artifact.write_svg(str(tmp_path / "h.svg"), reproducible=True)
        svg = (tmp_path / "h.svg").read_text()
        assert svg.lstrip().startswith("<?xml")

    def test_reproducible_svg_byte_identical(self, tmp_path):
        rng = np.random.default_rng(16)
        acc = rng.random((3, 3))
        artifact = performance_heatmap(acc, list("abc"), list("xyz"))
        artifact.write_svg(str(tmp_path / "a.svg"), reproducible=True)
        artifact.write_svg(str(tmp_path / "b.svg"), reproducible=True)
        assert (tmp_path / "a.svg").read_bytes() == \
            (tmp_path / "b.svg").read_bytes()
