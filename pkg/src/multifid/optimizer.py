"""Hyperband/SuccessiveHalving control loop with KDE-guided sampling.

The outer loop cycles brackets from many-cheap to few-expensive starts; the
inner loop evaluates rungs and promotes the best 1/eta fraction. New
configurations come from a warmstart portfolio (first bracket), uniform
random sampling, or a density-ratio proposal fitted on the highest budget
with enough completed evaluations.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field, asdict
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import kde
from .configspace import ConfigurationSpace
from .executor import Job, JobResult, Objective, WorkerPool

__all__ = [
    "BudgetLadder", "Bracket", "EvaluationRecord", "RunHistory", "Limits",
    "budget_ladder", "bracket_plan", "sh_promote", "run", "load_history",
]

CRASH_LOSS = 1.0


@dataclass(frozen=True)
class BudgetLadder:
    b_min: int
    b_max: int
    eta: float
    rungs: tuple[int, ...]


def budget_ladder(b_min: float, b_max: float, eta: float) -> BudgetLadder:
    """Geometric rungs b_max / eta^k, rounded to integers, pinning b_max."""
    if not (0 < b_min <= b_max):
        raise ValueError(f"invalid budget bounds ({b_min}, {b_max})")
    if eta <= 1:
        raise ValueError(f"eta must be > 1, got {eta}")
    n_steps = int(math.floor(math.log(b_max / b_min) / math.log(eta) + 1e-9))
    rungs = []
    for k in range(n_steps, -1, -1):
        rungs.append(max(1, round(b_max / eta ** k)))
    rungs = tuple(dict.fromkeys(rungs))  # drop accidental duplicates
    return BudgetLadder(b_min=int(b_min), b_max=int(b_max), eta=eta, rungs=rungs)


@dataclass(frozen=True)
class Bracket:
    index: int
    rung_sizes: tuple[int, ...]
    rung_budgets: tuple[int, ...]


def bracket_plan(ladder: BudgetLadder, s: int) -> Bracket:
    """Hyperband bracket s: start ceil((s_max+1) * eta^s / (s+1)) configs at
    rung s_max - s and keep floor(n / eta^j) at each promotion."""
    s_max = len(ladder.rungs) - 1
    if not (0 <= s <= s_max):
        raise ValueError(f"bracket index {s} out of range [0, {s_max}]")
    n0 = math.ceil((s_max + 1) * ladder.eta ** s / (s + 1))
    sizes = tuple(max(1, math.floor(n0 / ladder.eta ** j)) for j in range(s + 1))
    budgets = ladder.rungs[s_max - s:]
    return Bracket(index=s, rung_sizes=sizes, rung_budgets=budgets)


def sh_promote(rung_results: Sequence[tuple[int, float]], eta: float) -> list[int]:
    """Keep the floor(n/eta) lowest-loss ids (min 1); ties to earlier entries."""
    if not rung_results:
        raise ValueError("empty rung")
    n_keep = max(1, math.floor(len(rung_results) / eta))
    order = sorted(range(len(rung_results)), key=lambda i: (rung_results[i][1], i))
    return [rung_results[i][0] for i in order[:n_keep]]


@dataclass
class EvaluationRecord:
    config_id: int
    configuration: dict[str, Any]
    budget: int
    seed: int
    loss: float
    status: str = "ok"
    origin: str = "random"  # 'random' | 'model' | 'portfolio'
    wall_time: float = 0.0
    learning_curve: list[float] | None = None

    def to_json(self) -> str:
        doc = {"config_id": self.config_id, "configuration": self.configuration,
               "budget": self.budget, "seed": self.seed, "loss": self.loss,
               "status": self.status, "origin": self.origin,
               "wall_time": self.wall_time}
        if self.learning_curve is not None:
            doc["learning_curve"] = [round(float(v), 10) for v in self.learning_curve]
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "EvaluationRecord":
        doc = json.loads(line)
        return cls(config_id=doc["config_id"], configuration=doc["configuration"],
                   budget=doc["budget"], seed=doc["seed"], loss=doc["loss"],
                   status=doc["status"], origin=doc["origin"],
                   wall_time=doc["wall_time"],
                   learning_curve=doc.get("learning_curve"))

    def rank_loss(self) -> float:
        return math.inf if self.status == "crashed" else self.loss


class RunHistory:
    """Append-only evaluation log with per-budget indices and the incumbent
    trajectory at the highest budget."""

    def __init__(self, b_max: int) -> None:
        self.b_max = b_max
        self.records: list[EvaluationRecord] = []
        self._by_budget: dict[int, list[EvaluationRecord]] = {}
        self.trajectory: list[tuple[float, int, int, float]] = []
        self._sim_time = 0.0

    def add(self, record: EvaluationRecord) -> None:
        self.records.append(record)
        self._by_budget.setdefault(record.budget, []).append(record)
        self._sim_time += record.wall_time
        if record.budget == self.b_max and record.status == "ok":
            best = self.trajectory[-1][3] if self.trajectory else math.inf
            if record.loss < best:
                self.trajectory.append(
                    (self._sim_time, len(self.records), record.budget, record.loss))

    def records_at(self, budget: int) -> list[EvaluationRecord]:
        return self._by_budget.get(budget, [])

    def incumbent(self, budget: int) -> tuple[dict[str, Any], float]:
        """Lowest-loss configuration at a budget; ties to the earliest record."""
        candidates = [r for r in self.records_at(budget) if r.status == "ok"]
        if not candidates:
            raise ValueError(f"no completed records at budget {budget}")
        best = min(candidates, key=lambda r: r.loss)
        return best.configuration, best.loss

    def __len__(self) -> int:
        return len(self.records)


def load_history(path: str, b_max: int) -> RunHistory:
    """Load a persisted history, tolerating a truncated trailing line."""
    history = RunHistory(b_max)
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                history.add(EvaluationRecord.from_json(line))
            except (json.JSONDecodeError, KeyError):
                break  # truncated tail
    return history


@dataclass
class Limits:
    max_iterations: int = 10
    wall_clock: float | None = None
    seed: int = 0
    workers: int = 1


class _OptimizerState:
    def __init__(self, space: ConfigurationSpace, ladder: BudgetLadder,
                 history: RunHistory, portfolio_configs: Sequence[Mapping[str, Any]],
                 use_model: bool, random_fraction: float) -> None:
        self.space = space
        self.ladder = ladder
        self.history = history
        self.portfolio_queue = [dict(c) for c in portfolio_configs]
        self.in_first_bracket = True
        self.use_model = use_model
        self.random_fraction = random_fraction
        self._model_cache: dict[tuple[int, int], kde.KdeModel] = {}

    def _model_for_highest_budget(self) -> kde.KdeModel | None:
        d = len(self.space)
        for budget in reversed(self.ladder.rungs):
            records = [r for r in self.history.records_at(budget) if r.status == "ok"]
            if len(records) >= d + 2:
                key = (budget, len(records))
                model = self._model_cache.get(key)
                if model is None:
                    obs = [(self.space.to_unit_cube(r.configuration), r.loss)
                           for r in records]
                    model = kde.fit_tpe(obs, budget, self.space.dimension_kinds())
                    self._model_cache[key] = model
                return model
        return None

    def next_sample(self, rng: np.random.Generator) -> tuple[dict[str, Any], str]:
        """Portfolio first (first bracket only), then random-fraction coin,
        then the best-budget density model, then uniform random."""
        if self.in_first_bracket and self.portfolio_queue:
            return self.portfolio_queue.pop(0), "portfolio"
        if rng.random() < self.random_fraction:
            return self.space.sample_uniform(rng), "random"
        if self.use_model:
            model = self._model_for_highest_budget()
            if model is not None:
                vec = kde.propose(model, rng)
                return self.space.from_unit_cube(vec), "model"
        return self.space.sample_uniform(rng), "random"


class _Persister:
    """Run-directory writer; replays an existing history tape on resume."""

    def __init__(self, run_dir: str | None, space_doc: str | None,
                 meta: dict[str, Any], b_max: int) -> None:
        self.run_dir = run_dir
        self.tape: list[EvaluationRecord] = []
        self.tape_pos = 0
        self._fh = None
        self.prediction_entries: list[dict[str, Any]] = []
        if run_dir is None:
            return
        os.makedirs(run_dir, exist_ok=True)
        hist_path = os.path.join(run_dir, "runhistory.jsonl")
        if os.path.exists(hist_path):
            self.tape = load_history(hist_path, b_max).records
            # rewrite so a truncated trailing line never lingers
            with open(hist_path, "w", encoding="utf-8") as fh:
                for rec in self.tape:
                    fh.write(rec.to_json() + "\n")
        if space_doc is not None:
            with open(os.path.join(run_dir, "space.json"), "w", encoding="utf-8") as fh:
                fh.write(space_doc)
        with open(os.path.join(run_dir, "meta.json"), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        self._fh = open(hist_path, "a", encoding="utf-8")

    def replay_next(self) -> EvaluationRecord | None:
        if self.tape_pos < len(self.tape):
            rec = self.tape[self.tape_pos]
            self.tape_pos += 1
            return rec
        return None

    def append(self, record: EvaluationRecord) -> None:
        if self._fh is not None:
            self._fh.write(record.to_json() + "\n")
            self._fh.flush()

    def store_predictions(self, model_id: str, budget: int, val_loss: float,
                          timestamp: float, matrix: np.ndarray) -> None:
        if self.run_dir is None:
            return
        pred_dir = os.path.join(self.run_dir, "predictions")
        os.makedirs(pred_dir, exist_ok=True)
        np.savetxt(os.path.join(pred_dir, f"{model_id}.csv"), matrix,
                   delimiter=",", fmt="%.8f")
        self.prediction_entries.append(
            {"model_id": model_id, "budget": budget, "val_loss": val_loss,
             "timestamp": timestamp})

    def finish(self, history: RunHistory,
               true_labels: np.ndarray | None = None) -> None:
        if self.run_dir is None:
            return
        if self._fh is not None:
            self._fh.close()
            self._fh = None
        with open(os.path.join(self.run_dir, "trajectory.csv"), "w",
                  encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["wall_time_s", "n_evals", "budget", "incumbent_loss"])
            for row in history.trajectory:
                writer.writerow([f"{row[0]:.6f}", row[1], row[2], f"{row[3]:.10f}"])
        if self.prediction_entries:
            pred_dir = os.path.join(self.run_dir, "predictions")
            os.makedirs(pred_dir, exist_ok=True)
            with open(os.path.join(pred_dir, "manifest.json"), "w",
                      encoding="utf-8") as fh:
                json.dump(self.prediction_entries, fh, indent=2, sort_keys=True)
            if true_labels is not None:
                np.savetxt(os.path.join(pred_dir, "labels.csv"),
                           np.asarray(true_labels, dtype=int), fmt="%d")


def run(space: ConfigurationSpace, objective: Objective, ladder: BudgetLadder,
        limits: Limits, portfolio: Sequence[Mapping[str, Any]] | None = None,
        run_dir: str | None = None, use_model: bool = True,
        random_fraction: float = kde.RANDOM_FRACTION,
        space_doc: str | None = None) -> RunHistory:
    """Execute brackets cycling s = s_max..0 until a limit triggers.

    One iteration is one SuccessiveHalving bracket. If a run directory with a
    runhistory.jsonl is given, completed evaluations are replayed instead of
    re-executed, so a truncated run resumes to the same state.
    """
    rng = np.random.default_rng(limits.seed)
    history = RunHistory(ladder.rungs[-1])
    warmstart = getattr(portfolio, "entries", portfolio) or []
    state = _OptimizerState(space, ladder, history,
                            warmstart, use_model, random_fraction)
    meta = {
        "ladder": {"b_min": ladder.b_min, "b_max": ladder.b_max,
                   "eta": ladder.eta, "rungs": list(ladder.rungs)},
        "limits": {"max_iterations": limits.max_iterations,
                   "wall_clock": limits.wall_clock, "seed": limits.seed,
                   "workers": limits.workers},
        "seed": limits.seed,
    }
    meta["run_id"] = hashlib.sha1(
        json.dumps(meta, sort_keys=True).encode()).hexdigest()[:12]
    persister = _Persister(run_dir, space_doc, meta, ladder.rungs[-1])
    pool = WorkerPool(objective, limits.workers)
    start_time = time.monotonic()
    s_max = len(ladder.rungs) - 1
    next_config_id = 0

    def out_of_time() -> bool:
        return (limits.wall_clock is not None
                and time.monotonic() - start_time >= limits.wall_clock)

    for iteration in range(limits.max_iterations):
        if out_of_time():
            break
        s = s_max - (iteration % (s_max + 1))
        bracket = bracket_plan(ladder, s)
        n0 = bracket.rung_sizes[0]
        if state.in_first_bracket and state.portfolio_queue:
            n0 = max(n0, len(state.portfolio_queue))
        sampled = []
        for _ in range(n0):
            config, origin = state.next_sample(rng)
            sampled.append((next_config_id, config, origin))
            next_config_id += 1
        survivors = sampled
        for rung_idx, budget in enumerate(bracket.rung_budgets):
            if rung_idx > 0 and out_of_time():
                break
            jobs = [Job(job_id=cid, configuration=config, budget=budget,
                        seed=limits.seed) for cid, config, _ in survivors]
            records: list[EvaluationRecord] = []
            fresh_jobs, reused = [], {}
            for job in jobs:
                replayed = persister.replay_next()
                if replayed is not None:
                    reused[job.job_id] = replayed
                else:
                    fresh_jobs.append(job)
            fresh_results = {r.job_id: r for r in pool.run_jobs(fresh_jobs)}
            for (cid, config, origin), job in zip(survivors, jobs):
                if cid in reused:
                    rec = reused[cid]
                else:
                    res = fresh_results[cid]
                    rec = EvaluationRecord(
                        config_id=cid, configuration=config, budget=budget,
                        seed=limits.seed,
                        loss=res.loss if res.status == "ok" else CRASH_LOSS,
                        status=res.status, origin=origin,
                        wall_time=(res.wall_time if res.status == "ok" and res.wall_time
                                   else float(budget)),
                        learning_curve=res.learning_curve)
                    persister.append(rec)
                    if res.predictions is not None:
                        persister.store_predictions(
                            model_id=f"{cid}_b{budget}", budget=budget,
                            val_loss=rec.loss,
                            timestamp=history._sim_time + rec.wall_time,
                            matrix=res.predictions)
                records.append(rec)
                history.add(rec)
            if rung_idx + 1 < len(bracket.rung_budgets):
                promoted = sh_promote(
                    [(r.config_id, r.rank_loss()) for r in records], ladder.eta)
                by_id = {cid: (cid, config, origin)
                         for cid, config, origin in survivors}
                survivors = [by_id[cid] for cid in promoted]
        state.in_first_bracket = False
    persister.finish(history, getattr(objective, "true_labels", None))
    return history
