"""
Selection quality: earth mover's distance between the pool and the selected subset.

With the pool weighted uniformly (1/N) and every selected feature weighted by the share of
the pool nearest to it (|C_j| / N), the optimal coupling sends each pool feature entirely to
its nearest selected feature, so

    EMD = (1/N) * sum_i ||f_i - f_{s_{c_i}}||_2 = (1/N) * sum_i sqrt(2 - 2 sim(f_i, f_{s_{c_i}}))

emd_lp_oracle solves the transport problem from scratch to confirm that claim.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import coo_matrix, vstack
from scipy.spatial.distance import cdist, pdist

from config import Config
from selection.core_model import MixtureDiagnostics, project_rows, similarity_matrix
from selection.matching import SelectionResult
from services.feature_store import FeaturePool
from utils.errors import OracleTooLargeError, ValidationError

logger = logging.getLogger(__name__)

ORACLE_METHODS = ("assignment", "highs")


@dataclass(frozen=True)
class TransportPlan:
    """Sparse coupling: (pool index i, selected slot j) -> mass.

    Each pool row sends its mass to the slot of its most similar selected feature, lowest slot
    on ties, except that a selected row always keeps its own slot. The two rules only part
    ways when the pool holds duplicate rows; column marginals then count each selected copy
    once instead of piling every copy onto the lowest slot. The EMD value is the same.
    """

    entries: Dict[Tuple[int, int], float]
    n: int
    b: int

    def row_marginals(self) -> np.ndarray:
        rows = np.zeros(self.n)
        for (i, _), mass in self.entries.items():
            rows[i] += mass
        return rows

    def column_marginals(self) -> np.ndarray:
        cols = np.zeros(self.b)
        for (_, j), mass in self.entries.items():
            cols[j] += mass
        return cols

    def total_mass(self) -> float:
        return float(sum(self.entries.values()))


@dataclass
class DiagnosticsReport:
    emd: float
    min_pairwise_selected_distance: Optional[float]
    mean_nearest_selected_distance: float
    loss_trace_summary: Optional[dict] = None
    assumption_stats: Optional[MixtureDiagnostics] = None
    oracle: Optional[dict] = field(default=None)

    def to_dict(self) -> dict:
        data = {
            "emd": self.emd,
            "min_pairwise": self.min_pairwise_selected_distance,
            "mean_nearest": self.mean_nearest_selected_distance,
        }
        if self.oracle is not None:
            data["oracle"] = self.oracle
        if self.assumption_stats is not None:
            data["assumption"] = self.assumption_stats.to_dict()
        return data


def _unit64(pool: FeaturePool) -> np.ndarray:
    """Pool rows in float64, re-normalized so cosine and Euclidean geometry agree to rounding."""
    return project_rows(pool.as_float64())


def _selected_rows(pool: FeaturePool, selection: SelectionResult) -> np.ndarray:
    selection.validate_for(pool)
    return selection.indices


def nearest_selected(pool: FeaturePool, selection: SelectionResult) -> Tuple[np.ndarray, np.ndarray]:
    """For every pool row: slot of its nearest selected feature and the distance to it.

    Ties go to the lowest slot, but a selected row is pinned to its own slot.
    """
    sel = _selected_rows(pool, selection)
    features = _unit64(pool)
    c = np.argmax(similarity_matrix(features, features[sel]), axis=1)
    # a selected item is at distance exactly 0 from itself
    own = np.full(pool.n, -1, dtype=np.int64)
    own[sel] = np.arange(sel.size)
    is_selected = own >= 0
    c[is_selected] = own[is_selected]
    dist = np.linalg.norm(features - features[sel][c], axis=1)
    return c, dist


def emd_closed_form(pool: FeaturePool, selection: SelectionResult) -> Tuple[float, TransportPlan]:
    """Mean distance from each pool feature to its nearest selected feature, plus that plan."""
    c, dist = nearest_selected(pool, selection)
    mass = 1.0 / pool.n
    plan = TransportPlan(entries={(i, int(j)): mass for i, j in enumerate(c)}, n=pool.n, b=selection.b)
    return float(dist.mean()), plan


def column_weights(pool: FeaturePool, selection: SelectionResult) -> np.ndarray:
    """|C_j| / N for every selected slot."""
    c, _ = nearest_selected(pool, selection)
    return np.bincount(c, minlength=selection.b) / pool.n


def _cost_matrix(pool: FeaturePool, selection: SelectionResult) -> np.ndarray:
    features = _unit64(pool)
    return cdist(features, features[selection.indices], metric="euclidean")


def emd_lp_oracle(pool: FeaturePool, selection: SelectionResult, max_n: Optional[int] = None,
                  method: str = "assignment") -> float:
    """Exact optimum of the transport problem with rows 1/N and columns |C_j|/N.

    "assignment" expands column j into |C_j| unit slots; the transport polytope has integral
    vertices, so the N x N assignment problem reaches the same optimum exactly.
    "highs" solves the LP over the full coupling directly.
    """
    max_n = Config.ORACLE_MAX_N if max_n is None else max_n
    if pool.n > max_n:
        raise OracleTooLargeError(f"oracle is capped at N={max_n}, pool has {pool.n} items")
    if method not in ORACLE_METHODS:
        raise ValidationError(f"unknown oracle method {method!r}, expected one of {ORACLE_METHODS}")
    _selected_rows(pool, selection)
    n, b = pool.n, selection.b
    cost = _cost_matrix(pool, selection)
    c, _ = nearest_selected(pool, selection)
    counts = np.bincount(c, minlength=b)

    if method == "assignment":
        expanded = cost[:, np.repeat(np.arange(b), counts)]
        rows, cols = linear_sum_assignment(expanded)
        return float(expanded[rows, cols].sum() / n)

    row_idx = np.repeat(np.arange(n), b)
    col_idx = np.arange(n * b)
    a_rows = coo_matrix((np.ones(n * b), (row_idx, col_idx)), shape=(n, n * b))
    a_cols = coo_matrix((np.ones(n * b), (np.tile(np.arange(b), n), col_idx)), shape=(b, n * b))
    a_eq = vstack([a_rows, a_cols]).tocsc()
    b_eq = np.concatenate([np.full(n, 1.0 / n), counts / n])
    res = linprog(cost.reshape(-1), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise ValidationError(f"transport LP failed: {res.message}")
    return float(res.fun)


def diversity_stats(pool: FeaturePool, selection: SelectionResult) -> Tuple[Optional[float], float]:
    """(minimum distance between selected features or None when B < 2, mean nearest distance)."""
    sel = _selected_rows(pool, selection)
    _, dist = nearest_selected(pool, selection)
    mean_nearest = float(dist.mean())
    if sel.size < 2:
        return None, mean_nearest
    min_pairwise = float(pdist(_unit64(pool)[sel], metric="euclidean").min())
    return min_pairwise, mean_nearest


def build_diagnostics(pool: FeaturePool, selection: SelectionResult, loss_summary: Optional[dict] = None,
                      assumption_stats: Optional[MixtureDiagnostics] = None,
                      oracle: bool = False) -> DiagnosticsReport:
    emd, _ = emd_closed_form(pool, selection)
    min_pairwise, mean_nearest = diversity_stats(pool, selection)
    oracle_block = None
    if oracle:
        value = emd_lp_oracle(pool, selection)
        oracle_block = {"emd": value, "abs_diff": abs(value - emd)}
        logger.info(f"oracle EMD {value:.12f} vs closed form {emd:.12f}")
    return DiagnosticsReport(
        emd=emd,
        min_pairwise_selected_distance=min_pairwise,
        mean_nearest_selected_distance=mean_nearest,
        loss_trace_summary=loss_summary,
        assumption_stats=assumption_stats,
        oracle=oracle_block,
    )
