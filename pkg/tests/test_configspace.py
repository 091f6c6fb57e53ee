"""Conditional configuration space: parsing, sampling, encoding."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multifid import fixture_path
from multifid.configspace import (ConfigurationSpace, ConditionRule,
                                  HyperparameterSpec, SpaceError, load_space,
                                  parse_space)


@pytest.fixture(scope="module")
def space1():
    return load_space(fixture_path("space1.json"))


@pytest.fixture(scope="module")
def space2():
    return load_space(fixture_path("space2.json"))


class TestParsing:
    def test_space1_counts(self, space1):
        assert len(space1.hyperparameters) == 7
        assert len(space1.conditions) == 0
        kinds = sorted(h.kind for h in space1.hyperparameters)
        assert kinds.count("int") == 3
        assert kinds.count("float") == 4

    def test_space2_counts(self, space2):
        assert len(space2.hyperparameters) == 23
        assert len(space2.conditions) == 18
        net = next(h for h in space2.hyperparameters if h.name == "network type")
        assert set(net.categories) == {"ResNet", "MLPNet"}

    def test_space2_momentum_range_differs_from_space1(self, space1, space2):
        m1 = next(h for h in space1.hyperparameters if h.name == "momentum")
        m2 = next(h for h in space2.hyperparameters if h.name == "momentum")
        assert m1.upper == 0.99
        assert m2.upper == 0.999

    def test_self_loop_condition_rejected(self):
        doc = {"name": "bad", "hyperparameters": [
            {"name": "a", "type": "cat", "range": ["x", "y"], "default": "x",
             "condition": {"parent": "a", "values": ["x"]}}]}
        with pytest.raises(SpaceError, match="cycl"):
            parse_space(doc)

    def test_duplicate_name_rejected(self):
        doc = {"name": "bad", "hyperparameters": [
            {"name": "a", "type": "float", "range": [0, 1], "default": 0.5},
            {"name": "a", "type": "float", "range": [0, 1], "default": 0.5}]}
        with pytest.raises(SpaceError, match="a"):
            parse_space(doc)

    def test_default_outside_domain_rejected(self):
        with pytest.raises((SpaceError, ValueError)):
            parse_space({"name": "bad", "hyperparameters": [
                {"name": "a", "type": "float", "range": [0, 1], "default": 2}]})

    def test_log_scale_requires_positive_lower(self):
        with pytest.raises((SpaceError, ValueError)):
            HyperparameterSpec(name="a", kind="float", lower=0.0, upper=1.0,
                               log=True, default=0.5)

    def test_unknown_condition_parent_rejected(self):
        doc = {"name": "bad", "hyperparameters": [
            {"name": "a", "type": "float", "range": [0, 1], "default": 0.5,
             "condition": {"parent": "ghost", "values": [1]}}]}
        with pytest.raises(SpaceError, match="ghost"):
            parse_space(doc)


class TestSampling:
    def test_space1_all_assigned(self, space1):
        rng = np.random.default_rng(0)
        for _ in range(50):
            config = space1.sample_uniform(rng)
            assert set(config) == set(space1.names)
            space1.validate_config(config)

    def test_space2_conditionals_respected(self, space2):
        rng = np.random.default_rng(1)
        saw_mlp = saw_res = False
        for _ in range(200):
            config = space2.sample_uniform(rng)
            space2.validate_config(config)
            if config["network type"] == "MLPNet":
                saw_mlp = True
                assert not any("(Res)" in k for k in config)
            else:
                saw_res = True
                assert not any("(MLP)" in k for k in config)
        assert saw_mlp and saw_res

    def test_log_uniform_median(self, space1):
        rng = np.random.default_rng(7)
        values = [space1.sample_uniform(rng)["learning rate (SGD)"]
                  for _ in range(10_000)]
        assert 2.5e-3 <= float(np.median(values)) <= 4.0e-3

    def test_log_sampling_ks_statistic(self, space1):
        rng = np.random.default_rng(3)
        logs = np.sort(np.log([space1.sample_uniform(rng)["learning rate (SGD)"]
                               for _ in range(10_000)]))
        lo, hi = math.log(1e-4), math.log(1e-1)
        cdf = (logs - lo) / (hi - lo)
        n = len(cdf)
        empirical = np.arange(1, n + 1) / n
        ks = float(np.max(np.abs(empirical - cdf)))
        assert ks < 0.02


class TestActiveSet:
    def test_no_conditions_all_active(self, space1):
        rng = np.random.default_rng(0)
        config = space1.sample_uniform(rng)
        assert space1.active_set(config) == set(space1.names)

    def test_sgd_activates_momentum_not_adam(self, space2):
        rng = np.random.default_rng(2)
        while True:
            config = space2.sample_uniform(rng)
            if config.get("optimizer") == "SGD":
                break
        active = space2.active_set(config)
        assert "momentum" in active
        assert "learning rate (Adam)" not in active

    def test_resnet_dropout_gate(self, space2):
        rng = np.random.default_rng(5)
        while True:
            config = space2.sample_uniform(rng)
            if (config.get("network type") == "ResNet"
                    and config.get("use dropout (Res)") is False):
                break
        assert "max dropout (Res)" not in space2.active_set(config)

    def test_removing_condition_never_shrinks_active_set(self, space2):
        rng = np.random.default_rng(11)
        config = dict(space2.sample_uniform(rng))
        # cover every name so the assignment stays complete when a dropped
        # rule turns a conditional hyperparameter into a top-level one
        for h in space2.hyperparameters:
            config.setdefault(h.name, h.default)
        base = space2.active_set(config)
        for skip in range(len(space2.conditions)):
            reduced = ConfigurationSpace(
                space2.hyperparameters,
                [c for i, c in enumerate(space2.conditions) if i != skip])
            assert base <= reduced.active_set(config)


class TestEncoding:
    def test_log_lower_bound_is_zero(self, space1):
        rng = np.random.default_rng(0)
        config = space1.sample_uniform(rng)
        config["batch size"] = 16
        vec = space1.to_unit_cube(config)
        j = space1.names.index("batch size")
        assert vec[j] == pytest.approx(0.0, abs=0.02)

    def test_linear_midpoint(self, space1):
        rng = np.random.default_rng(0)
        config = space1.sample_uniform(rng)
        config["momentum"] = 0.545
        vec = space1.to_unit_cube(config)
        j = space1.names.index("momentum")
        assert vec[j] == pytest.approx(0.5, abs=1e-9)

    def test_inactive_dims_imputed(self, space2):
        rng = np.random.default_rng(4)
        while True:
            config = space2.sample_uniform(rng)
            if config["network type"] == "MLPNet":
                break
        vec = space2.to_unit_cube(config)
        for j, h in enumerate(space2.hyperparameters):
            if "(Res)" in h.name and h.kind in ("float", "int"):
                assert vec[j] == pytest.approx(0.5)

    def test_all_zero_vector_decodes_to_lower_bounds(self, space1):
        config = space1.from_unit_cube(np.zeros(len(space1)))
        for h in space1.hyperparameters:
            if h.kind in ("float", "int"):
                assert config[h.name] == pytest.approx(h.lower, rel=1e-9)
            else:
                assert config[h.name] == h.categories[0]

    def test_decoded_resnet_vector_has_no_mlp_keys(self, space2):
        rng = np.random.default_rng(6)
        for _ in range(100):
            config = space2.from_unit_cube(rng.random(len(space2)))
            space2.validate_config(config)
            if config["network type"] == "ResNet":
                assert not any("(MLP)" in k for k in config)
                return
        pytest.fail("never decoded a ResNet configuration")

    @pytest.mark.parametrize("fixture", ["space1.json", "space2.json"])
    def test_round_trip_config(self, fixture):
        space = load_space(fixture_path(fixture))
        rng = np.random.default_rng(8)
        for _ in range(1000):
            config = space.sample_uniform(rng)
            back = space.from_unit_cube(space.to_unit_cube(config))
            assert set(back) == set(config)
            for name, value in config.items():
                h = next(x for x in space.hyperparameters if x.name == name)
                if h.kind == "float":
                    assert back[name] == pytest.approx(value, rel=1e-6)
                else:
                    assert back[name] == value

    def test_vector_round_trip_up_to_quantization(self, space1):
        rng = np.random.default_rng(9)
        for _ in range(1000):
            v = rng.random(len(space1))
            v2 = space1.to_unit_cube(space1.from_unit_cube(v))
            v3 = space1.to_unit_cube(space1.from_unit_cube(v2))
            assert np.allclose(v2, v3, atol=1e-9)

    def test_length_mismatch_rejected(self, space1):
        with pytest.raises((SpaceError, ValueError)):
            space1.from_unit_cube(np.zeros(3))

    def test_out_of_domain_value_rejected(self, space1):
        rng = np.random.default_rng(0)
        config = space1.sample_uniform(rng)
        config["momentum"] = 5.0
        with pytest.raises((SpaceError, ValueError)):
            space1.to_unit_cube(config)


class TestConfigKey:
    def test_key_stable_under_ordering(self, space1):
        rng = np.random.default_rng(0)
        config = space1.sample_uniform(rng)
        shuffled = dict(reversed(list(config.items())))
        assert space1.config_key(config) == space1.config_key(shuffled)

    def test_key_is_json(self, space1):
        rng = np.random.default_rng(0)
        config = space1.sample_uniform(rng)
        assert isinstance(json.loads(space1.config_key(config)), dict)


@given(seed=st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_samples_always_validate(seed):
    space = load_space(fixture_path("space2.json"))
    config = space.sample_uniform(np.random.default_rng(seed))
    space.validate_config(config)


@given(u=st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=7,
                  max_size=7))
@settings(max_examples=100, deadline=None)
def test_any_unit_vector_decodes_to_valid_config(u):
    space = load_space(fixture_path("space1.json"))
    config = space.from_unit_cube(np.array(u))
    space.validate_config(config)
