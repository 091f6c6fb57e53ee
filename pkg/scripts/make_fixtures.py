#!/usr/bin/env python3
"""Regenerate the frozen fixtures: the mini learning-curve benchmark bundles
and the bundled 16-entry greedy warmstart portfolio.

Outputs are committed; rerunning must be byte-stable.
"""

from __future__ import annotations

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from multifid import fixture_path, load_space  # noqa: E402
from multifid.configspace import ConfigurationSpace  # noqa: E402
from multifid.executor import (SYNTHETIC_CONSTANTS, ReplayObjective,  # noqa: E402
                               SyntheticCurveObjective, load_replay)
from multifid.optimizer import Limits, budget_ladder, run  # noqa: E402
from multifid.portfolio import (build_matrix, greedy_build,  # noqa: E402
                                relative_regret, save_portfolio)

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "multifid",
                           "fixtures")
DATASETS = ["adult", "higgs", "vehicle", "volkert", "phoneme"]
N_CONFIGS = 200
B_MAX = 50
BUDGETS = [12, 25, 50]
N_VALIDATION = 200
N_CLASSES = 3


def clamp01(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def make_bundles() -> None:
    space = load_space(fixture_path("space1.json"))
    rng = np.random.default_rng(12345)
    configs = [space.sample_uniform(rng) for _ in range(N_CONFIGS)]
    c = SYNTHETIC_CONSTANTS
    for ds_index, name in enumerate(DATASETS):
        obj = SyntheticCurveObjective(noise=True, dataset_seed=100 + ds_index,
                                      space=space)
        records = []
        for config in configs:
            val_loss = np.array(obj.curve(config, B_MAX, seed=0))
            val = clamp01(1.0 - val_loss)
            train = clamp01(val * 1.05)
            test = clamp01(val * 0.98)
            _, f_inf, gamma = obj._features(config)
            adaptive = {}
            for b in BUDGETS:
                e = np.arange(1, b + 1, dtype=float)
                # budget-targeted schedule: decay finishes stronger at epoch b
                decay = (c["f0"] - f_inf) * e ** (-gamma) * (1.0 - 0.25 * e / b)
                adaptive[str(b)] = [round(v, 5) for v in
                                    clamp01(1.0 - (f_inf + decay))]
            records.append({
                "config": config,
                "seed": 0,
                "val_curve": [round(v, 5) for v in val],
                "train_curve": [round(v, 5) for v in train],
                "test_curve": [round(v, 5) for v in test],
                "adaptive_val_curves": adaptive,
            })
        doc = {
            "dataset": name,
            "space": "../space1.json",
            "b_max": B_MAX,
            "n_validation_instances": N_VALIDATION,
            "n_classes": N_CLASSES,
            "records": records,
        }
        out = os.path.join(FIXTURE_DIR, "mini_lcbench", f"{name}.json")
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)
        print(f"wrote {out} ({len(records)} records)")


def make_portfolio() -> None:
    space = load_space(fixture_path("space1.json"))
    ladder = budget_ladder(12, B_MAX, 2)
    bundles = {name: load_replay(os.path.join(FIXTURE_DIR, "mini_lcbench",
                                              f"{name}.json"))
               for name in DATASETS}
    candidates = []
    candidate_ids = []
    for name in DATASETS:
        surrogate = ReplayObjective(bundles[name], mode="surrogate")
        for seed in range(4):
            history = run(space, surrogate, ladder,
                          Limits(max_iterations=9, seed=seed))
            incumbent, _ = history.incumbent(B_MAX)
            # snap to the nearest recorded configuration so every candidate
            # is exactly evaluable on every dataset
            vec = space.to_unit_cube(incumbent)
            keys = surrogate._keys
            idx = int(np.argmin(np.sum((surrogate._encoded - vec) ** 2, axis=1)))
            candidates.append(bundles[name].configs[keys[idx]])
            candidate_ids.append(f"{name}_seed{seed}")
    objectives = [ReplayObjective(bundles[name], mode="strict")
                  for name in DATASETS]
    matrix = build_matrix(candidates, objectives, B_MAX,
                          dataset_names=DATASETS, candidate_ids=candidate_ids)
    regrets = relative_regret(matrix)
    portfolio = greedy_build(regrets, size=16, candidates=candidates,
                             candidate_ids=candidate_ids, dataset_ids=DATASETS)
    out = os.path.join(FIXTURE_DIR, "portfolio16.json")
    save_portfolio(portfolio, out, space_path="space1.json")
    print(f"wrote {out} (regret curve: {[round(v, 5) for v in portfolio.regret_curve]})")


if __name__ == "__main__":
    os.makedirs(os.path.join(FIXTURE_DIR, "mini_lcbench"), exist_ok=True)
    make_bundles()
    make_portfolio()
