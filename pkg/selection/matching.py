"""
Turn continuous parameters into B distinct pool indices.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from selection.core_model import SelectionParams, similarity_matrix
from services.feature_store import FeaturePool
from utils.errors import BudgetError, InvalidSelectionError

logger = logging.getLogger(__name__)

METHODS = ("activeft", "random", "fds", "kmeans")


@dataclass(frozen=True)
class SelectionResult:
    """Chosen pool indices in slot order (s_j for slot j) plus provenance."""

    indices: np.ndarray
    method: str
    seed: int
    config_digest: str = ""
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64)
        if indices.ndim != 1 or indices.size == 0:
            raise InvalidSelectionError("a selection needs at least one index")
        if np.unique(indices).size != indices.size:
            raise InvalidSelectionError("selection indices must be distinct")
        if indices.min() < 0:
            raise InvalidSelectionError("selection indices must be non-negative")
        object.__setattr__(self, "indices", indices)

    @property
    def b(self) -> int:
        return int(self.indices.size)

    def sorted_indices(self) -> List[int]:
        return sorted(int(i) for i in self.indices)

    def validate_for(self, pool: FeaturePool) -> None:
        if int(self.indices.max()) >= pool.n:
            raise InvalidSelectionError(
                f"index {int(self.indices.max())} out of range for a pool of {pool.n} items")


def greedy_match(scores: np.ndarray) -> np.ndarray:
    """Give each row (slot) a distinct column (pool item) from a B x N score matrix.

    Slots are served in descending order of their best score (ties: lower best column, then
    lower slot); each claims its highest-scoring unclaimed column, lowest column on ties.
    """
    b, n = scores.shape
    if b > n:
        raise BudgetError(f"cannot match {b} slots to {n} pool items")
    best_col = np.argmax(scores, axis=1)
    best = scores[np.arange(b), best_col]
    order = sorted(range(b), key=lambda j: (-best[j], best_col[j], j))

    claimed = np.zeros(n, dtype=bool)
    chosen = np.empty(b, dtype=np.int64)
    conflicts = 0
    for j in order:
        k = int(best_col[j])
        if claimed[k]:
            conflicts += 1
            row = np.where(claimed, -np.inf, scores[j])
            k = int(np.argmax(row))
        claimed[k] = True
        chosen[j] = k
    if conflicts:
        logger.debug(f"greedy matching resolved {conflicts} duplicate claims")
    return chosen


def match(pool: FeaturePool, params: SelectionParams, method: str = "activeft", seed: int = 0,
          config_digest: str = "", extras: Optional[dict] = None) -> SelectionResult:
    """f_{s_j} = argmax_k sim(f_k, theta_j), deduplicated by greedy_match."""
    if params.b > pool.n:
        raise BudgetError(f"budget {params.b} exceeds pool size {pool.n}")
    scores = similarity_matrix(pool.as_float64(), params.theta).T
    indices = greedy_match(scores)
    return SelectionResult(indices=indices, method=method, seed=seed,
                           config_digest=config_digest, extras=extras or {})
