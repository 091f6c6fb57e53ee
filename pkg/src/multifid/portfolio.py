"""Cross-dataset performance matrices and greedy warmstart portfolios.

Candidates (incumbents of per-dataset runs) are cross-evaluated on every
benchmark dataset; configurations are then added greedily to minimize the
portfolio's mean relative regret over all datasets.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .configspace import ConfigurationSpace
from .executor import Job, Objective, WorkerPool

__all__ = [
    "PerformanceMatrix", "Portfolio", "relative_regret", "greedy_build",
    "portfolio_size_curve", "build_matrix", "save_portfolio", "load_portfolio",
    "save_matrix_csv",
]


@dataclass
class PerformanceMatrix:
    candidates: list[dict[str, Any]]
    datasets: list[str]
    scores: np.ndarray  # (n_candidates, n_datasets) validation accuracies
    crashed: np.ndarray | None = None  # bool mask of imputed cells
    candidate_ids: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=float)
        if self.scores.shape != (len(self.candidates), len(self.datasets)):
            raise ValueError("score matrix shape mismatch")
        if np.any(self.scores < 0) or np.any(self.scores > 1):
            raise ValueError("accuracies must lie in [0, 1]")
        if self.crashed is None:
            self.crashed = np.zeros(self.scores.shape, dtype=bool)
        if not self.candidate_ids:
            self.candidate_ids = [f"candidate_{i}" for i in range(len(self.candidates))]


@dataclass
class Portfolio:
    entries: list[dict[str, Any]]  # greedy insertion order
    provenance: list[str] = field(default_factory=list)
    regret_curve: list[float] = field(default_factory=list)
    dataset_ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)


def relative_regret(matrix: PerformanceMatrix, absolute: bool = False) -> np.ndarray:
    """Per-cell regret against the best candidate accuracy on each dataset.

    Relative: (a* - a) / a*; columns with a* = 0 get regret 0 everywhere.
    The absolute switch returns a* - a instead.
    """
    best = matrix.scores.max(axis=0)
    gap = best[None, :] - matrix.scores
    if absolute:
        return gap
    with np.errstate(divide="ignore", invalid="ignore"):
        regret = np.where(best[None, :] > 0, gap / best[None, :], 0.0)
    return regret


def _greedy_order(regrets: np.ndarray, size: int) -> tuple[list[int], list[float]]:
    n_cand, _ = regrets.shape
    chosen: list[int] = []
    curve: list[float] = []
    covered = np.full(regrets.shape[1], np.inf)
    remaining = list(range(n_cand))
    for _ in range(size):
        best_idx, best_val = None, np.inf
        for idx in remaining:
            val = float(np.minimum(covered, regrets[idx]).mean())
            if val < best_val - 1e-15:
                best_idx, best_val = idx, val
        assert best_idx is not None
        chosen.append(best_idx)
        remaining.remove(best_idx)
        covered = np.minimum(covered, regrets[best_idx])
        curve.append(float(covered.mean()))
    return chosen, curve


def greedy_build(regrets: np.ndarray, size: int,
                 candidates: Sequence[Mapping[str, Any]] | None = None,
                 candidate_ids: Sequence[str] | None = None,
                 dataset_ids: Sequence[str] | None = None) -> Portfolio:
    """Iteratively add the candidate minimizing the portfolio's mean
    min-regret over datasets; ties break by candidate index."""
    regrets = np.asarray(regrets, dtype=float)
    if size < 1:
        raise ValueError("portfolio size must be >= 1")
    if size > regrets.shape[0]:
        raise ValueError(f"size {size} exceeds candidate count {regrets.shape[0]}")
    if candidates is not None:
        # equal configurations share one regret profile; keep the first so
        # the portfolio entries stay unique
        seen: dict[str, int] = {}
        keep = []
        for i, c in enumerate(candidates):
            key = json.dumps(c, sort_keys=True, default=str)
            if key not in seen:
                seen[key] = i
                keep.append(i)
        if len(keep) < regrets.shape[0]:
            regrets = regrets[keep]
            size = min(size, len(keep))
            candidates = [candidates[i] for i in keep]
            if candidate_ids:
                candidate_ids = [candidate_ids[i] for i in keep]
    order, curve = _greedy_order(regrets, size)
    if candidates is None:
        entries = [{"candidate_index": i} for i in order]
    else:
        entries = [dict(candidates[i]) for i in order]
    ids = list(candidate_ids) if candidate_ids else [f"candidate_{i}" for i in
                                                    range(regrets.shape[0])]
    return Portfolio(entries=entries, provenance=[ids[i] for i in order],
                     regret_curve=curve,
                     dataset_ids=list(dataset_ids) if dataset_ids else [])


def portfolio_size_curve(regrets: np.ndarray, max_size: int) -> list[tuple[int, float]]:
    """Greedy trajectory of (size, training mean min-regret); non-increasing."""
    regrets = np.asarray(regrets, dtype=float)
    max_size = min(max_size, regrets.shape[0])
    _, curve = _greedy_order(regrets, max_size)
    return [(k + 1, v) for k, v in enumerate(curve)]


def build_matrix(candidates: Sequence[Mapping[str, Any]],
                 objectives: Sequence[Objective], b_max: int,
                 dataset_names: Sequence[str] | None = None,
                 candidate_ids: Sequence[str] | None = None,
                 seed: int = 0, workers: int = 1) -> PerformanceMatrix:
    """Evaluate every candidate on every objective at the top budget.

    Crashed cells are imputed with accuracy 0 and flagged.
    """
    if dataset_names:
        names = list(dataset_names)
    else:
        names = []
        for i, obj in enumerate(objectives):
            bundle = getattr(obj, "bundle", None)
            names.append(bundle.dataset_name if bundle is not None else f"dataset_{i}")
    scores = np.zeros((len(candidates), len(objectives)))
    crashed = np.zeros(scores.shape, dtype=bool)
    for j, objective in enumerate(objectives):
        pool = WorkerPool(objective, workers)
        jobs = [Job(job_id=i, configuration=dict(c), budget=b_max, seed=seed)
                for i, c in enumerate(candidates)]
        for result in pool.run_jobs(jobs):
            if result.status == "ok":
                scores[result.job_id, j] = 1.0 - result.loss
            else:
                crashed[result.job_id, j] = True
    return PerformanceMatrix(candidates=[dict(c) for c in candidates],
                             datasets=names, scores=scores, crashed=crashed,
                             candidate_ids=list(candidate_ids) if candidate_ids
                             else [])


# -- artifacts ---------------------------------------------------------------

def save_portfolio(portfolio: Portfolio, path: str, space_path: str = "") -> None:
    doc = {
        "space": space_path,
        "entries": [{"config": e, "source_run": (portfolio.provenance[i]
                                                 if i < len(portfolio.provenance) else ""),
                     "rank": i}
                    for i, e in enumerate(portfolio.entries)],
        "construction": {"regret_curve": portfolio.regret_curve,
                         "dataset_ids": portfolio.dataset_ids},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def load_portfolio(path: str) -> Portfolio:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    entries = [e["config"] for e in doc["entries"]]
    return Portfolio(entries=entries,
                     provenance=[e.get("source_run", "") for e in doc["entries"]],
                     regret_curve=doc.get("construction", {}).get("regret_curve", []),
                     dataset_ids=doc.get("construction", {}).get("dataset_ids", []))


def save_matrix_csv(matrix: PerformanceMatrix, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["candidate"] + matrix.datasets)
        for i, cid in enumerate(matrix.candidate_ids):
            writer.writerow([cid] + [f"{v:.8f}" for v in matrix.scores[i]])
