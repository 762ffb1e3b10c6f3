"""
Similarity kernel and mixture-model semantics of the ActiveFT parametric model.

Each pool feature f_i belongs to the mixture component of the parameter it is most
cosine-similar to (c_i). The mixture weights and normalizing constants cancel once the
top-1 component dominates, so they are never materialized; assumption_diagnostic measures
how strongly that domination holds.
"""

import logging
from dataclasses import dataclass

import numpy as np

from services.feature_store import FeaturePool
from utils.errors import DimensionMismatchError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.07
UNIT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class Temperature:
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if not self.tau > 0:
            raise ValidationError(f"temperature must be > 0, got {self.tau}")

    def __float__(self) -> float:
        return float(self.tau)


@dataclass
class SelectionParams:
    """The B continuous parameters theta (B x C, float64), one unit row per selected slot."""

    theta: np.ndarray

    @property
    def b(self) -> int:
        return int(self.theta.shape[0])

    @property
    def dim(self) -> int:
        return int(self.theta.shape[1])

    @classmethod
    def from_rows(cls, rows) -> "SelectionParams":
        return cls(theta=project_rows(np.array(rows, dtype=np.float64)))

    def project(self) -> None:
        """Re-normalize every row onto the unit sphere in place."""
        self.theta = project_rows(self.theta)

    def is_unit(self, tol: float = UNIT_TOLERANCE) -> bool:
        return bool(np.all(np.abs(np.linalg.norm(self.theta, axis=1) - 1.0) <= tol))

    def copy(self) -> "SelectionParams":
        return SelectionParams(theta=self.theta.copy())


@dataclass(frozen=True)
class Assignment:
    """c[i]: index of the parameter nearest to f_i; top1_sim[i]: that similarity."""

    c: np.ndarray
    top1_sim: np.ndarray

    def restrict(self, rows) -> "Assignment":
        rows = np.asarray(rows)
        return Assignment(c=self.c[rows], top1_sim=self.top1_sim[rows])

    def counts(self, b: int) -> np.ndarray:
        """|C_j| for every component j."""
        return np.bincount(self.c, minlength=b)


@dataclass(frozen=True)
class MixtureDiagnostics:
    """Entry k: mean over the pool of exp(sim to the (k+1)-th most similar parameter / tau)."""

    topk_mean_exp_sim: np.ndarray

    def ratio(self) -> float:
        """entry0 / entry1, how dominant the top-1 component is. NaN with a single entry."""
        if self.topk_mean_exp_sim.size < 2:
            return float("nan")
        return float(self.topk_mean_exp_sim[0] / self.topk_mean_exp_sim[1])

    def to_dict(self) -> dict:
        return {"topk_mean_exp_sim": [float(v) for v in self.topk_mean_exp_sim]}


def project_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return matrix / norms


def cosine_sim(a, b) -> float:
    """sim(a, b) = a^T b for unit vectors."""
    return float(np.dot(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)))


def similarity_matrix(features: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """N x B matrix of cosine similarities, accumulated in float64."""
    features = np.asarray(features, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if features.shape[1] != theta.shape[1]:
        raise DimensionMismatchError(
            f"feature dim {features.shape[1]} does not match parameter dim {theta.shape[1]}")
    return features @ theta.T


def _features(pool) -> np.ndarray:
    return pool.as_float64() if isinstance(pool, FeaturePool) else np.asarray(pool, dtype=np.float64)


def assign(pool, params: SelectionParams) -> Assignment:
    """c_i = argmax_j sim(f_i, theta_j); numpy's argmax keeps the lowest index on ties."""
    sims = similarity_matrix(_features(pool), params.theta)
    c = np.argmax(sims, axis=1)
    top1 = sims[np.arange(sims.shape[0]), c]
    return Assignment(c=c, top1_sim=top1)


def assumption_diagnostic(pool, params: SelectionParams, tau, k: int) -> MixtureDiagnostics:
    """Top-k mean exponential similarity, the check that the top-1 component dominates."""
    tau = Temperature(float(tau)).tau
    if k < 1:
        raise ValidationError("k must be a positive integer")
    if k > params.b:
        raise ValidationError(f"k={k} exceeds the number of parameters B={params.b}")
    sims = similarity_matrix(_features(pool), params.theta)
    ranked = -np.sort(-sims, axis=1)[:, :k]
    entries = np.exp(ranked / tau).mean(axis=0)
    logger.debug(f"assumption diagnostic top-{k}: entry0={entries[0]:.4g}")
    return MixtureDiagnostics(topk_mean_exp_sim=entries)
