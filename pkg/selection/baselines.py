"""
Reference selection strategies: uniform random, FDS (k-center-greedy under cosine
distance) and k-means with the pool item nearest to each centroid.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from selection.matching import SelectionResult, greedy_match
from services.feature_store import FeaturePool
from utils.errors import BudgetError, ValidationError

logger = logging.getLogger(__name__)

KMEANS_MAX_ITERS = 100


def _check_args(pool: FeaturePool, b: int, seed: int) -> None:
    if b < 1 or b > pool.n:
        raise BudgetError(f"budget b={b} must lie in [1, {pool.n}]")
    if seed < 0:
        raise ValidationError(f"seed must be non-negative, got {seed}")


def select_random(pool: FeaturePool, b: int, seed: int) -> SelectionResult:
    """B indices drawn uniformly without replacement."""
    _check_args(pool, b, seed)
    rng = np.random.default_rng(seed)
    indices = rng.choice(pool.n, size=b, replace=False)
    return SelectionResult(indices=indices, method="random", seed=seed)


def select_fds(pool: FeaturePool, b: int, seed: int, first: Optional[int] = None) -> SelectionResult:
    """K-center-greedy: each pick maximizes the minimum cosine distance to the picks so far.

    The first center is drawn uniformly from the seeded generator unless pinned by `first`.
    """
    _check_args(pool, b, seed)
    if first is None:
        first = int(np.random.default_rng(seed).integers(pool.n))
    elif not 0 <= first < pool.n:
        raise ValidationError(f"first index {first} out of range for a pool of {pool.n} items")

    features = pool.as_float64()
    selected = [first]
    min_dist = 1.0 - features @ features[first]
    radii = [float("inf")]
    min_dist[first] = -np.inf
    for _ in range(1, b):
        nxt = int(np.argmax(min_dist))
        radii.append(float(min_dist[nxt]))
        selected.append(nxt)
        min_dist = np.minimum(min_dist, 1.0 - features @ features[nxt])
        min_dist[selected] = -np.inf
    return SelectionResult(indices=np.array(selected), method="fds", seed=seed,
                           extras={"radii": radii})


@dataclass
class LloydResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective_history: List[float]
    iterations: int
    converged: bool


def kmeans_plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted seeding; falls back to uniform draws once every point is covered."""
    n = x.shape[0]
    centers = [int(rng.integers(n))]
    d2 = ((x - x[centers[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        d2[centers] = 0.0
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            remaining = np.setdiff1d(np.arange(n), centers)
            nxt = int(rng.choice(remaining))
        centers.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[centers].copy()


def _sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (x * x).sum(axis=1)[:, None] + (centroids * centroids).sum(axis=1)[None, :] - 2.0 * x @ centroids.T
    return np.maximum(d2, 0.0)


def lloyd(x: np.ndarray, k: int, rng: np.random.Generator, max_iters: int = KMEANS_MAX_ITERS) -> LloydResult:
    """Lloyd iterations from k-means++ seeds until the assignment is a fixed point.

    objective_history[t] is the sum of squared distances right after the t-th assignment step.
    A cluster left empty is re-seeded at the point farthest from its own centroid.
    """
    if max_iters < 1:
        raise ValidationError("max_iters must be >= 1")
    centroids = kmeans_plus_plus(x, k, rng)
    labels = None
    history: List[float] = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        d2 = _sq_distances(x, centroids)
        new_labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(x.shape[0]), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels

        point_cost = d2[np.arange(x.shape[0]), labels].copy()
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j] > 0:
                centroids[j] = x[labels == j].mean(axis=0)
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmax(point_cost))
            centroids[j] = x[far]
            point_cost[far] = -1.0
        if counts.min() == 0:
            logger.debug(f"re-seeded {int((counts == 0).sum())} empty clusters at iteration {it}")
    return LloydResult(centroids=centroids, labels=np.argmin(_sq_distances(x, centroids), axis=1),
                       objective_history=history, iterations=it, converged=converged)


def select_kmeans(pool: FeaturePool, b: int, seed: int, max_iters: int = KMEANS_MAX_ITERS) -> SelectionResult:
    """K-means with K = B, then the pool item nearest to each centroid."""
    _check_args(pool, b, seed)
    x = pool.as_float64()
    result = lloyd(x, b, np.random.default_rng(seed), max_iters)
    # nearest item = highest negative squared distance, shared greedy dedup
    indices = greedy_match(-_sq_distances(x, result.centroids).T)
    logger.debug(f"k-means stopped after {result.iterations} iterations (converged={result.converged})")
    return SelectionResult(indices=indices, method="kmeans", seed=seed,
                           extras={"iterations": result.iterations, "converged": result.converged})
