"""Greedy post-hoc ensemble selection over stored validation predictions.

Starting from an empty multiset, the model improving the selection metric the
most is added (with replacement) each round; repeated additions weight the
averaged class-probability matrices.
"""

from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "StoreEntry", "PredictionStore", "WeightedEnsemble",
    "topk_filter", "greedy_select", "ensemble_predict", "ensemble_trajectory",
    "load_prediction_store", "save_ensemble",
    "DEFAULT_ENSEMBLE_SIZE", "DEFAULT_TOP_K",
]

DEFAULT_ENSEMBLE_SIZE = 50
DEFAULT_TOP_K = 30


@dataclass(frozen=True)
class StoreEntry:
    model_id: str
    budget: int
    predictions: np.ndarray  # (n_instances, n_classes), rows sum to 1
    val_loss: float
    timestamp: float = 0.0


@dataclass
class PredictionStore:
    entries: list[StoreEntry]
    true_labels: np.ndarray

    def __post_init__(self) -> None:
        self.true_labels = np.asarray(self.true_labels, dtype=int)
        if not self.entries:
            return
        shape = self.entries[0].predictions.shape
        for e in self.entries:
            if e.predictions.shape != shape:
                raise ValueError(f"{e.model_id}: prediction shape mismatch")
            rowsums = e.predictions.sum(axis=1)
            if np.any(np.abs(rowsums - 1.0) > 1e-6):
                raise ValueError(f"{e.model_id}: prediction rows must sum to 1")
        if self.true_labels.shape[0] != shape[0]:
            raise ValueError("label count does not match prediction rows")
        if np.any(self.true_labels < 0) or np.any(self.true_labels >= shape[1]):
            raise ValueError("label outside class range")

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class WeightedEnsemble:
    member_counts: dict[str, int]
    size: int
    score: float
    metric: str = "accuracy"

    @property
    def weights(self) -> dict[str, float]:
        return {m: c / self.size for m, c in self.member_counts.items()}


def _metric_fn(metric: str):
    if metric == "accuracy":
        def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
            return float(np.mean(np.argmax(probs, axis=1) == labels))
        return accuracy
    if metric == "balanced_accuracy":
        def balanced(probs: np.ndarray, labels: np.ndarray) -> float:
            pred = np.argmax(probs, axis=1)
            recalls = []
            for cls in np.unique(labels):
                mask = labels == cls
                recalls.append(float(np.mean(pred[mask] == cls)))
            return float(np.mean(recalls))
        return balanced
    raise ValueError(f"unknown metric {metric!r}")


def topk_filter(store: PredictionStore, k: int) -> PredictionStore:
    """Keep the k entries with the lowest validation loss; ties to earlier
    entries (store order)."""
    if not store.entries:
        raise ValueError("empty prediction store")
    if k < 1:
        raise ValueError("k must be >= 1")
    order = sorted(range(len(store.entries)),
                   key=lambda i: (store.entries[i].val_loss, i))
    keep = sorted(order[:k])
    return PredictionStore(entries=[store.entries[i] for i in keep],
                           true_labels=store.true_labels)


def greedy_select(store: PredictionStore, ensemble_size: int = DEFAULT_ENSEMBLE_SIZE,
                  metric: str = "accuracy") -> WeightedEnsemble:
    """Caruana-style selection: exactly ensemble_size additions with
    replacement, each maximizing the metric of the running average."""
    if not store.entries:
        raise ValueError("empty prediction store")
    score_fn = _metric_fn(metric)
    running = np.zeros_like(store.entries[0].predictions)
    counts: Counter[str] = Counter()
    n_added = 0
    score = 0.0
    for _ in range(ensemble_size):
        best_i, best_score = None, -np.inf
        for i, entry in enumerate(store.entries):
            candidate = (running * n_added + entry.predictions) / (n_added + 1)
            s = score_fn(candidate, store.true_labels)
            if s > best_score + 1e-12:
                best_i, best_score = i, s
        assert best_i is not None
        entry = store.entries[best_i]
        running = (running * n_added + entry.predictions) / (n_added + 1)
        counts[entry.model_id] += 1
        n_added += 1
        score = best_score
    return WeightedEnsemble(member_counts=dict(counts), size=n_added,
                            score=score, metric=metric)


def ensemble_predict(ensemble: WeightedEnsemble,
                     predictions_by_id: dict[str, np.ndarray]) -> np.ndarray:
    """Count-weighted mean of member prediction matrices."""
    total = None
    for model_id, count in ensemble.member_counts.items():
        if model_id not in predictions_by_id:
            raise KeyError(f"missing predictions for member {model_id!r}")
        term = predictions_by_id[model_id] * count
        total = term if total is None else total + term
    if total is None:
        raise ValueError("ensemble has no members")
    return total / ensemble.size


def ensemble_trajectory(store: PredictionStore,
                        ensemble_size: int = DEFAULT_ENSEMBLE_SIZE,
                        k: int = DEFAULT_TOP_K,
                        metric: str = "accuracy") -> list[tuple[float, float]]:
    """Re-run selection restricted to models finished by each stored
    timestamp; returns (timestamp, selection score) points."""
    if not store.entries:
        raise ValueError("no predictions stored")
    points = []
    for ts in sorted({e.timestamp for e in store.entries}):
        available = [e for e in store.entries if e.timestamp <= ts]
        sub = PredictionStore(entries=available, true_labels=store.true_labels)
        ens = greedy_select(topk_filter(sub, k), ensemble_size, metric)
        points.append((ts, ens.score))
    return points


# -- run-directory interface -------------------------------------------------

def load_prediction_store(run_dir: str,
                          true_labels: np.ndarray) -> PredictionStore:
    """Load predictions/<model_id>.csv files listed in the manifest."""
    pred_dir = os.path.join(run_dir, "predictions")
    manifest_path = os.path.join(pred_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"no prediction manifest in {run_dir}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    entries = []
    for item in manifest:
        matrix = np.loadtxt(os.path.join(pred_dir, f"{item['model_id']}.csv"),
                            delimiter=",", ndmin=2)
        matrix = matrix / matrix.sum(axis=1, keepdims=True)
        entries.append(StoreEntry(model_id=item["model_id"],
                                  budget=item["budget"],
                                  predictions=matrix,
                                  val_loss=item["val_loss"],
                                  timestamp=item.get("timestamp", 0.0)))
    return PredictionStore(entries=entries, true_labels=true_labels)


def save_ensemble(ensemble: WeightedEnsemble, path: str) -> None:
    doc = {"members": [{"model_id": m, "count": c}
                       for m, c in sorted(ensemble.member_counts.items())],
           "size": ensemble.size, "metric": ensemble.metric,
           "score": ensemble.score}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
