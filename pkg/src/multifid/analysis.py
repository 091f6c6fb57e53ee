"""Study instruments: rank correlation across budgets, forest-based
hyperparameter importance (global variance fractions and local grids), and
configuration-by-dataset performance heatmaps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .configspace import ConfigurationSpace
from .executor import ReplayBundle

__all__ = [
    "spearman", "CorrelationReport", "budget_correlation",
    "ForestSurrogate", "fit_forest", "fanova_first_order", "lpi",
    "ImportanceReport", "HeatmapArtifact", "performance_heatmap",
    "FOREST_N_TREES", "FOREST_MAX_DEPTH", "FOREST_MIN_LEAF", "LPI_GRID_SIZE",
]

FOREST_N_TREES = 32
FOREST_MAX_DEPTH = 32
FOREST_MIN_LEAF = 3
LPI_GRID_SIZE = 21


# -- rank correlation --------------------------------------------------------

def _fractional_ranks(values: np.ndarray) -> np.ndarray:
    """Average-rank tie handling, 1-based."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of fractional ranks; NaN for constant input."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("spearman requires two equal-length vectors of size >= 2")
    rx, ry = _fractional_ranks(x), _fractional_ranks(y)
    sx, sy = rx.std(), ry.std()
    if sx == 0 or sy == 0:
        return float("nan")
    return float(np.mean((rx - rx.mean()) * (ry - ry.mean())) / (sx * sy))


@dataclass
class CorrelationReport:
    budget_pair: tuple[int, int]
    per_dataset: dict[str, float]
    mean: float
    std: float
    mode: str = "non-adaptive"


def _bundle_losses(bundle: ReplayBundle, budget: int, family: str) -> dict[str, float]:
    out = {}
    for key, entries in bundle.records.items():
        rec = entries[0]
        if family == "adaptive":
            curves = rec.get("adaptive_val_curves")
            if curves is None or str(budget) not in curves:
                raise ValueError(
                    f"{bundle.dataset_name}: no adaptive curve for budget {budget}")
            acc = curves[str(budget)][-1]
        else:
            acc = rec["val_curve"][budget - 1]
        out[key] = 1.0 - float(acc)
    return out


def budget_correlation(source: ReplayBundle | Sequence[ReplayBundle] | Any,
                       budget_pair: tuple[int, int],
                       mode: str = "non-adaptive") -> CorrelationReport:
    """Spearman coefficient per dataset for losses at two budgets.

    mode selects the curve family: 'non-adaptive' reads one stored curve at
    both epochs, 'adaptive' uses per-budget curve endpoints, 'cross'
    correlates the adaptive readout at the first budget against the
    non-adaptive one at the second.
    """
    b, b2 = budget_pair
    if hasattr(source, "records_at"):  # run history
        rec_a = {r.config_id: r.loss for r in source.records_at(b) if r.status == "ok"}
        rec_b = {r.config_id: r.loss for r in source.records_at(b2) if r.status == "ok"}
        shared = sorted(set(rec_a) & set(rec_b))
        if len(shared) < 10:
            raise ValueError(f"insufficient overlap: {len(shared)} shared configs")
        rho = spearman([rec_a[c] for c in shared], [rec_b[c] for c in shared])
        return CorrelationReport(budget_pair, {"history": rho}, rho, 0.0, mode)
    bundles = [source] if isinstance(source, ReplayBundle) else list(source)
    per_dataset = {}
    for bundle in bundles:
        fam_a = "adaptive" if mode in ("adaptive", "cross") else "non-adaptive"
        fam_b = "adaptive" if mode == "adaptive" else "non-adaptive"
        la = _bundle_losses(bundle, b, fam_a)
        lb = _bundle_losses(bundle, b2, fam_b)
        shared = sorted(set(la) & set(lb))
        if len(shared) < 10:
            raise ValueError(
                f"{bundle.dataset_name}: insufficient overlap ({len(shared)} configs)")
        per_dataset[bundle.dataset_name] = spearman(
            [la[k] for k in shared], [lb[k] for k in shared])
    vals = np.array(list(per_dataset.values()))
    return CorrelationReport(budget_pair, per_dataset,
                             float(vals.mean()), float(vals.std()), mode)


# -- regression forest -------------------------------------------------------

@dataclass
class _Leaf:
    lo: np.ndarray
    hi: np.ndarray
    mean: float


class _Tree:
    def __init__(self) -> None:
        self.leaves: list[_Leaf] = []

    def fit(self, X: np.ndarray, y: np.ndarray, lo: np.ndarray, hi: np.ndarray,
            depth: int, max_depth: int, min_leaf: int,
            rng: np.random.Generator) -> None:
        if depth >= max_depth or len(y) < 2 * min_leaf or np.ptp(y) == 0:
            self.leaves.append(_Leaf(lo.copy(), hi.copy(), float(y.mean())))
            return
        best = None  # (score, dim, threshold)
        n = len(y)
        for j in range(X.shape[1]):
            order = np.argsort(X[:, j], kind="stable")
            xs = X[order, j]
            ys = y[order]
            # candidate split after position i: left = first i+1 points
            csum = np.cumsum(ys)
            csq = np.cumsum(ys ** 2)
            nl = np.arange(1, n)
            nr = n - nl
            sse_left = csq[:-1] - csum[:-1] ** 2 / nl
            sse_right = (csq[-1] - csq[:-1]) - (csum[-1] - csum[:-1]) ** 2 / nr
            scores = sse_left + sse_right
            valid = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (nr >= min_leaf)
            if not valid.any():
                continue
            scores = np.where(valid, scores, np.inf)
            i = int(np.argmin(scores))
            if best is None or scores[i] < best[0]:
                best = (float(scores[i]), j, float((xs[i] + xs[i + 1]) / 2.0))
        if best is None:
            self.leaves.append(_Leaf(lo.copy(), hi.copy(), float(y.mean())))
            return
        _, j, thr = best
        left = X[:, j] <= thr
        hi_left = hi.copy()
        hi_left[j] = thr
        lo_right = lo.copy()
        lo_right[j] = thr
        self.fit(X[left], y[left], lo, hi_left, depth + 1, max_depth, min_leaf, rng)
        self.fit(X[~left], y[~left], lo_right, hi, depth + 1, max_depth, min_leaf, rng)

    def predict_one(self, x: np.ndarray) -> float:
        for leaf in self.leaves:
            if np.all(x >= leaf.lo - 1e-12) and np.all(x <= leaf.hi + 1e-12):
                return leaf.mean
        # numeric fallback: nearest leaf center
        centers = np.array([(l.lo + l.hi) / 2 for l in self.leaves])
        return self.leaves[int(np.argmin(np.sum((centers - x) ** 2, axis=1)))].mean


class ForestSurrogate:
    """Bagged regression trees over unit-cube encodings, with leaf boxes
    exposed for marginalization."""

    def __init__(self, trees: list[_Tree], oob_rmse: float,
                 space: ConfigurationSpace | None = None) -> None:
        self.trees = trees
        self.oob_rmse = oob_rmse
        self.space = space

    @property
    def dim(self) -> int:
        return len(self.trees[0].leaves[0].lo)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(len(X))
        for tree in self.trees:
            out += np.array([tree.predict_one(x) for x in X])
        return out / len(self.trees)


def fit_forest(X: np.ndarray, y: np.ndarray, n_trees: int = FOREST_N_TREES,
               rng: np.random.Generator | None = None,
               max_depth: int = FOREST_MAX_DEPTH,
               min_leaf: int = FOREST_MIN_LEAF,
               space: ConfigurationSpace | None = None) -> ForestSurrogate:
    """Bootstrap-sampled CART trees with variance-reduction splits."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) < 20:
        raise ValueError(f"need at least 20 samples, got {len(X)}")
    if rng is None:
        rng = np.random.default_rng(0)
    n, d = X.shape
    trees = []
    oob_sum = np.zeros(n)
    oob_count = np.zeros(n)
    for _ in range(n_trees):
        idx = rng.integers(n, size=n)
        tree = _Tree()
        tree.fit(X[idx], y[idx], np.zeros(d), np.ones(d), 0, max_depth,
                 min_leaf, rng)
        trees.append(tree)
        oob_mask = np.ones(n, dtype=bool)
        oob_mask[np.unique(idx)] = False
        for i in np.where(oob_mask)[0]:
            oob_sum[i] += tree.predict_one(X[i])
            oob_count[i] += 1
    seen = oob_count > 0
    if seen.any():
        resid = y[seen] - oob_sum[seen] / oob_count[seen]
        oob_rmse = float(np.sqrt(np.mean(resid ** 2)))
    else:
        oob_rmse = float("nan")
    return ForestSurrogate(trees, oob_rmse, space)


# -- importance --------------------------------------------------------------

@dataclass
class ImportanceReport:
    method: str  # 'fanova' | 'lpi'
    scores: dict[str, float]
    degenerate: bool = False


def _tree_marginal_variance(tree: _Tree, j: int) -> tuple[float, float]:
    """(V_j, V): variance of the dim-j marginal and the tree's total variance
    under the uniform measure on the unit cube."""
    lows = np.array([l.lo for l in tree.leaves])
    highs = np.array([l.hi for l in tree.leaves])
    means = np.array([l.mean for l in tree.leaves])
    widths = highs - lows
    vols = widths.prod(axis=1)
    total_mean = float((vols * means).sum())
    total_var = float((vols * means ** 2).sum() - total_mean ** 2)
    # piecewise-constant marginal along dim j
    breaks = np.unique(np.concatenate([lows[:, j], highs[:, j]]))
    vol_rest = np.where(widths[:, j] > 0, vols / np.where(widths[:, j] > 0,
                                                          widths[:, j], 1.0), 0.0)
    vj = 0.0
    mj = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        mid = (a + b) / 2.0
        mask = (lows[:, j] <= mid) & (highs[:, j] >= mid)
        val = float((vol_rest[mask] * means[mask]).sum())
        seg = b - a
        mj += seg * val
        vj += seg * val ** 2
    vj -= mj ** 2
    return max(vj, 0.0), max(total_var, 0.0)


def fanova_first_order(surrogate: ForestSurrogate,
                       names: Sequence[str] | None = None) -> ImportanceReport:
    """Mean over trees of V_j / V: the fraction of each tree's variance
    explained by the single-dimension marginal."""
    d = surrogate.dim
    if names is None:
        names = (surrogate.space.names if surrogate.space is not None
                 else [f"x{j + 1}" for j in range(d)])
    scores = {}
    for j, name in enumerate(names):
        fractions = []
        for tree in surrogate.trees:
            vj, v = _tree_marginal_variance(tree, j)
            fractions.append(vj / v if v > 0 else 0.0)
        scores[name] = float(np.mean(fractions))
    degenerate = all(v == 0.0 for v in scores.values())
    return ImportanceReport(method="fanova", scores=scores, degenerate=degenerate)


def lpi(space: ConfigurationSpace,
        evaluate: Callable[[Mapping[str, Any]], float],
        incumbent: Mapping[str, Any],
        grid_size: int = LPI_GRID_SIZE) -> ImportanceReport:
    """Local importance: variance along each active hyperparameter's grid at
    the incumbent, normalized by the sum of the variances.

    Inactive hyperparameters score 0 and are excluded from the denominator.
    The active set is frozen at the incumbent; grid points that would toggle
    children are still evaluated with the incumbent's other assignments.
    """
    if grid_size < 3:
        raise ValueError("grid_size must be >= 3")
    space.validate_config(incumbent)
    active = space.active_set(incumbent)
    variances: dict[str, float] = {}
    for h in space.hyperparameters:
        if h.name not in active:
            variances[h.name] = 0.0
            continue
        if h.kind == "float":
            grid = (np.geomspace(h.lower, h.upper, grid_size) if h.log
                    else np.linspace(h.lower, h.upper, grid_size)).tolist()
        elif h.kind == "int":
            lo, hi = int(h.lower), int(h.upper)
            if hi - lo + 1 <= grid_size:
                grid = list(range(lo, hi + 1))
            elif h.log:
                grid = sorted({int(round(v)) for v in
                               np.geomspace(lo, hi, grid_size)})
            else:
                grid = sorted({int(round(v)) for v in
                               np.linspace(lo, hi, grid_size)})
        else:
            grid = list(h.categories)
        values = []
        for v in grid:
            probe = dict(incumbent)
            probe[h.name] = v
            values.append(float(evaluate(probe)))
        variances[h.name] = float(np.var(values))
    total = sum(variances[n] for n in active)
    if total == 0:
        scores = {n: (1.0 / len(active) if n in active else 0.0)
                  for n in variances}
        return ImportanceReport(method="lpi", scores=scores, degenerate=True)
    scores = {n: (variances[n] / total if n in active else 0.0)
              for n in variances}
    return ImportanceReport(method="lpi", scores=scores)


# -- heatmaps ----------------------------------------------------------------

@dataclass
class HeatmapArtifact:
    config_ids: list[str]
    dataset_ids: list[str]
    accuracy: np.ndarray  # rows/cols sorted by descending means
    regret: np.ndarray  # rows/cols sorted by ascending means
    accuracy_row_order: list[int] = field(default_factory=list)
    accuracy_col_order: list[int] = field(default_factory=list)

    def write_csv(self, acc_path: str, regret_path: str) -> None:
        for path, matrix, ids in ((acc_path, self.accuracy, self.config_ids),
                                  (regret_path, self.regret, self.config_ids)):
            with open(path, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["config"] + self.dataset_ids)
                for i, row in enumerate(matrix):
                    writer.writerow([ids[i]] + [f"{v:.8f}" for v in row])

    def write_svg(self, path: str, reproducible: bool = False) -> None:
        import matplotlib
        matplotlib.use("svg")
        if reproducible:
            # stable element ids instead of per-object hashes
            matplotlib.rcParams["svg.hashsalt"] = "fixed"
        import matplotlib.pyplot as plt
        fig, axes = plt.subplots(1, 2, figsize=(10, 4))
        for ax, matrix, title in ((axes[0], self.accuracy, "mean accuracy"),
                                  (axes[1], self.regret, "mean regret")):
            im = ax.imshow(matrix, aspect="auto", cmap="viridis")
            ax.set_title(title)
            fig.colorbar(im, ax=ax)
        metadata = {"Date": None} if reproducible else None
        fig.savefig(path, format="svg", metadata=metadata)
        plt.close(fig)


def performance_heatmap(accuracies: np.ndarray,
                        config_ids: Sequence[str],
                        dataset_ids: Sequence[str]) -> HeatmapArtifact:
    """Config-by-dataset accuracy and relative-regret matrices, each sorted
    by its row/column means."""
    accuracies = np.asarray(accuracies, dtype=float)
    if accuracies.shape[0] < 2 or accuracies.shape[1] < 2:
        raise ValueError("heatmap requires at least 2 configs and 2 datasets")
    best = accuracies.max(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        regret = np.where(best[None, :] > 0,
                          (best[None, :] - accuracies) / best[None, :], 0.0)
    acc_rows = np.argsort(-accuracies.mean(axis=1), kind="mergesort")
    acc_cols = np.argsort(-accuracies.mean(axis=0), kind="mergesort")
    reg_rows = np.argsort(regret.mean(axis=1), kind="mergesort")
    reg_cols = np.argsort(regret.mean(axis=0), kind="mergesort")
    return HeatmapArtifact(
        config_ids=[config_ids[i] for i in acc_rows],
        dataset_ids=[dataset_ids[i] for i in acc_cols],
        accuracy=accuracies[np.ix_(acc_rows, acc_cols)],
        regret=regret[np.ix_(reg_rows, reg_cols)],
        accuracy_row_order=acc_rows.tolist(),
        accuracy_col_order=acc_cols.tolist(),
    )
