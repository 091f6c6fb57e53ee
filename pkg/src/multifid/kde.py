"""TPE-style good/bad kernel density model over unit-cube encodings.

Observations are split by loss quantile into a "good" and a "bad" set; each
side gets a product-kernel density (truncated Gaussians on numeric dims,
Aitchison-Aitken on categorical cells). Proposals are drawn from a widened
good-density and ranked by the density ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .configspace import DimensionKind

__all__ = ["KdeModel", "fit_tpe", "log_density", "propose",
           "SPLIT_QUANTILE", "RANDOM_FRACTION", "N_SAMPLES",
           "BANDWIDTH_FACTOR", "MIN_BANDWIDTH"]

# Reference defaults for the density-model machinery; consumed here and by
# the optimizer's sampling loop.
SPLIT_QUANTILE = 0.15
RANDOM_FRACTION = 1.0 / 3.0
N_SAMPLES = 64
BANDWIDTH_FACTOR = 3.0
MIN_BANDWIDTH = 1e-3


@dataclass(frozen=True)
class KdeModel:
    budget: int
    good_points: np.ndarray  # (n_good, d)
    bad_points: np.ndarray  # (n_bad, d)
    good_bandwidths: np.ndarray
    bad_bandwidths: np.ndarray
    dimension_kinds: tuple[DimensionKind, ...]

    @property
    def dim(self) -> int:
        return self.good_points.shape[1]


def _scott_bandwidths(points: np.ndarray, kinds: Sequence[DimensionKind],
                      min_bandwidth: float) -> np.ndarray:
    n, d = points.shape
    factor = n ** (-1.0 / (d + 4))
    sigma = points.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
    bw = np.maximum(sigma * factor, min_bandwidth)
    for j, kind in enumerate(kinds):
        if kind.kind == "categorical":
            c = kind.n_cells
            # Aitchison-Aitken flat-vs-peaked weight, clamped to its valid range.
            bw[j] = min(max(bw[j], min_bandwidth), (c - 1) / c)
    return bw


def fit_tpe(observations: Sequence[tuple[np.ndarray, float]], budget: int,
            dimension_kinds: Sequence[DimensionKind],
            split_quantile: float = SPLIT_QUANTILE,
            min_bandwidth: float = MIN_BANDWIDTH) -> KdeModel:
    """Split observations by loss and fit per-side densities.

    The best ceil(split_quantile * n) points (at least d+1) form the good
    side; the rest form the bad side, padded with the next-best points when
    fewer than d+1 remain.
    """
    if not observations:
        raise ValueError("no observations")
    d = len(observations[0][0])
    n = len(observations)
    if n < d + 2:
        raise ValueError(f"too few observations: {n} < {d + 2}")
    losses = np.array([loss for _, loss in observations], dtype=float)
    if not np.all(np.isfinite(losses)):
        raise ValueError("non-finite loss in observations")
    order = np.argsort(losses, kind="stable")
    pts = np.array([observations[i][0] for i in order], dtype=float)
    n_good = max(math.ceil(split_quantile * n), d + 1)
    n_good = min(n_good, n - 1)
    good = pts[:n_good]
    bad = pts[n_good:]
    if len(bad) < d + 1:
        deficit = d + 1 - len(bad)
        borrow = pts[max(0, n_good - deficit):n_good]
        bad = np.concatenate([borrow, bad], axis=0)
    kinds = tuple(dimension_kinds)
    return KdeModel(
        budget=budget,
        good_points=good,
        bad_points=bad,
        good_bandwidths=_scott_bandwidths(good, kinds, min_bandwidth),
        bad_bandwidths=_scott_bandwidths(bad, kinds, min_bandwidth),
        dimension_kinds=kinds,
    )


def _cell_index(u: float, n_cells: int) -> int:
    return min(int(u * n_cells), n_cells - 1)


def _log_density_batch(pts: np.ndarray, bws: np.ndarray,
                       kinds: Sequence[DimensionKind],
                       queries: np.ndarray) -> np.ndarray:
    """Log mixture density at each query row; kernels weighted equally."""
    from scipy.special import ndtr

    m = len(pts)
    logk = np.zeros((len(queries), m))
    for j, kind in enumerate(kinds):
        mu = pts[:, j]
        if kind.kind == "categorical":
            c = kind.n_cells
            lam = bws[j]
            q_cells = np.minimum((queries[:, j] * c).astype(int), c - 1)
            p_cells = np.minimum((mu * c).astype(int), c - 1)
            same = q_cells[:, None] == p_cells[None, :]
            logk += np.where(same, math.log(1.0 - lam), math.log(lam / (c - 1)))
        else:
            bw = bws[j]
            z = (queries[:, j][:, None] - mu[None, :]) / bw
            # Gaussian truncated to [0, 1], renormalized per kernel center.
            norm_const = ndtr((1.0 - mu) / bw) - ndtr((0.0 - mu) / bw)
            logk += (-0.5 * z ** 2 - 0.5 * math.log(2 * math.pi) - math.log(bw)
                     - np.log(np.maximum(norm_const, 1e-300))[None, :])
    return logsumexp(logk, axis=1) - math.log(m)


def log_density(model: KdeModel, side: str, point: np.ndarray) -> float:
    """Log mixture density (equal kernel weights) of one side at a point."""
    point = np.asarray(point, dtype=float)
    if point.shape != (model.dim,):
        raise ValueError(f"point length {point.shape} != dimensionality {model.dim}")
    if side == "good":
        pts, bws = model.good_points, model.good_bandwidths
    elif side == "bad":
        pts, bws = model.bad_points, model.bad_bandwidths
    else:
        raise ValueError(f"unknown side {side!r}")
    return float(_log_density_batch(pts, bws, model.dimension_kinds,
                                    point[None, :])[0])


def _sample_kernel(mu: float, bw: float, kind: DimensionKind,
                   rng: np.random.Generator) -> float:
    if kind.kind == "categorical":
        c = kind.n_cells
        lam = min(bw, (c - 1) / c)
        idx = _cell_index(mu, c)
        if rng.random() < lam:
            others = [k for k in range(c) if k != idx]
            idx = others[int(rng.integers(len(others)))]
        return (idx + 0.5) / c
    # Truncated-normal draw by rejection; falls back to clipping.
    for _ in range(64):
        v = rng.normal(mu, bw)
        if 0.0 <= v <= 1.0:
            return float(v)
    return float(min(max(rng.normal(mu, bw), 0.0), 1.0))


def propose(model: KdeModel, rng: np.random.Generator,
            n_samples: int = N_SAMPLES,
            bandwidth_factor: float = BANDWIDTH_FACTOR) -> np.ndarray:
    """Draw candidates from the widened good-density; return the best by ratio."""
    widened = np.minimum(model.good_bandwidths * bandwidth_factor, 10.0)
    for j, kind in enumerate(model.dimension_kinds):
        if kind.kind == "categorical":
            c = kind.n_cells
            widened[j] = min(widened[j], (c - 1) / c)
    candidates = np.empty((max(1, n_samples), model.dim))
    for i in range(len(candidates)):
        mu = model.good_points[int(rng.integers(len(model.good_points)))]
        candidates[i] = [
            _sample_kernel(mu[j], widened[j], model.dimension_kinds[j], rng)
            for j in range(model.dim)]
    scores = (_log_density_batch(model.good_points, model.good_bandwidths,
                                 model.dimension_kinds, candidates)
              - _log_density_batch(model.bad_points, model.bad_bandwidths,
                                   model.dimension_kinds, candidates))
    return candidates[int(np.argmax(scores))]
