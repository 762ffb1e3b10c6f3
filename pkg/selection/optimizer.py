"""
Projected Adam on the ActiveFT loss.

    L = -E_i[sim(f_i, theta_{c_i}) / tau] + lambda * E_j[log sum_{k != j} exp(sim(theta_j, theta_k) / tau)]

The first summand pulls every parameter toward the features assigned to it; the second
pushes parameters apart. c_i is treated as a constant inside one iteration. After each
Adam step the rows of theta are projected back onto the unit sphere.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Union

import numpy as np
from scipy.special import logsumexp, softmax

from config import Config
from selection.core_model import (
    Assignment, SelectionParams, assign, project_rows, similarity_matrix,
)
from services.feature_store import FeaturePool
from utils.errors import BudgetError, DegenerateBudgetError, DimensionMismatchError, ValidationError

logger = logging.getLogger(__name__)

CI_UPDATES = ("every_iteration", "frozen_at_init")
REGULARIZERS = ("activeft", "none_s1", "infonce_s2")
LOG_EVERY = 50


@dataclass(frozen=True)
class OptimizerConfig:
    tau: float = Config.TAU
    lambda_: float = 1.0
    lr: float = Config.LEARNING_RATE
    iterations: int = Config.ITERATIONS
    subsample_m: Union[int, str] = "all"
    ci_update: str = "every_iteration"
    regularizer: str = "activeft"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValidationError("tau must be > 0")
        if not self.lr > 0:
            raise ValidationError("lr must be > 0")
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValidationError("Adam betas must lie in (0, 1)")
        if not self.adam_eps > 0:
            raise ValidationError("adam_eps must be > 0")
        if self.subsample_m != "all" and (not isinstance(self.subsample_m, int) or self.subsample_m < 1):
            raise ValidationError(f"subsample_m must be a positive integer or 'all', got {self.subsample_m!r}")
        if self.ci_update not in CI_UPDATES:
            raise ValidationError(f"unknown ci_update {self.ci_update!r}, expected one of {CI_UPDATES}")
        if self.regularizer not in REGULARIZERS:
            raise ValidationError(f"unknown regularizer {self.regularizer!r}, expected one of {REGULARIZERS}")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["lambda"] = data.pop("lambda_")
        return data

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_seed(self, seed: int) -> "OptimizerConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class LossBreakdown:
    """total = d_term + r_term; r_term already carries lambda and the sign of the loss."""

    total: float
    d_term: float
    r_term: float

    def to_dict(self) -> dict:
        return {"total": self.total, "d_term": self.d_term, "r_term": self.r_term}


@dataclass
class OptimizationTrace:
    losses: List[LossBreakdown]
    final_params: SelectionParams
    initial_params: SelectionParams
    initial_full_loss: LossBreakdown
    final_full_loss: LossBreakdown
    batch_sizes: List[int] = field(default_factory=list)
    # largest | ||theta_j|| - 1 | right after each iteration's projection
    norm_errors: List[float] = field(default_factory=list)

    def summary(self) -> dict:
        return {"initial": self.initial_full_loss.to_dict(), "final": self.final_full_loss.to_dict()}


class Adam:
    """Adam with bias-corrected moments; the moments are never projected."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = None
        self.v = None
        self.t = 0

    def step(self, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(param)
            self.v = np.zeros_like(param)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * (grad * grad)
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return param - self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


def _check_budget(n: int, b: int) -> None:
    if b < 1 or b > n:
        raise BudgetError(f"budget b={b} must lie in [1, {n}]")


def check_degenerate(b: int, regularizer: str) -> None:
    if b == 1 and regularizer != "none_s1":
        raise DegenerateBudgetError(
            f"regularizer {regularizer!r} needs at least two parameters (B=1 leaves the k != j sum empty); "
            "use regularizer none_s1 or a larger budget")


def init_params(pool: FeaturePool, b: int, seed: int) -> SelectionParams:
    """theta_j = f_{s_j} for B pool rows drawn uniformly without replacement."""
    _check_budget(pool.n, b)
    rng = np.random.default_rng(seed)
    rows = rng.choice(pool.n, size=b, replace=False)
    return SelectionParams(theta=project_rows(pool.as_float64()[rows]))


def _batch_features(pool_batch) -> np.ndarray:
    if isinstance(pool_batch, FeaturePool):
        return pool_batch.as_float64()
    return np.asarray(pool_batch, dtype=np.float64)


def _prepare(pool_batch, params: SelectionParams, config: OptimizerConfig, assignment: Assignment):
    features = _batch_features(pool_batch)
    if features.shape[1] != params.dim:
        raise DimensionMismatchError(f"batch dim {features.shape[1]} does not match parameter dim {params.dim}")
    if assignment.c.shape[0] != features.shape[0]:
        raise ValidationError("assignment length does not match the batch")
    check_degenerate(params.b, config.regularizer)
    return features


def _pairwise_logits(theta: np.ndarray, tau: float) -> np.ndarray:
    logits = theta @ theta.T / tau
    np.fill_diagonal(logits, -np.inf)
    return logits


def compute_loss(pool_batch, params: SelectionParams, config: OptimizerConfig,
                 assignment: Assignment) -> LossBreakdown:
    features = _prepare(pool_batch, params, config, assignment)
    theta = params.theta
    tau = config.tau
    n = features.shape[0]
    matched = np.einsum("ic,ic->i", features, theta[assignment.c])
    d_term = -float(matched.sum() / (n * tau))

    if config.regularizer == "none_s1":
        r_term = 0.0
    elif config.regularizer == "activeft":
        lse = logsumexp(_pairwise_logits(theta, tau), axis=1)
        r_term = config.lambda_ * float(lse.mean())
    else:
        # contrastive denominator: every batch feature against the anchor's parameter
        lse = logsumexp(similarity_matrix(features, theta) / tau, axis=0)
        r_term = float(lse[assignment.c].sum() / n)
    return LossBreakdown(total=d_term + r_term, d_term=d_term, r_term=r_term)


def loss_gradient(pool_batch, params: SelectionParams, config: OptimizerConfig,
                  assignment: Assignment) -> np.ndarray:
    """Analytic B x C gradient of compute_loss with the assignment held fixed."""
    features = _prepare(pool_batch, params, config, assignment)
    theta = params.theta
    tau = config.tau
    n, b = features.shape[0], params.b

    grad = np.zeros_like(theta)
    np.add.at(grad, assignment.c, features)
    grad *= -1.0 / (n * tau)

    if config.regularizer == "activeft":
        # theta_m appears as anchor (row m) and as neighbour (column m)
        p = softmax(_pairwise_logits(theta, tau), axis=1)
        grad += (config.lambda_ / (b * tau)) * ((p + p.T) @ theta)
    elif config.regularizer == "infonce_s2":
        q = softmax(similarity_matrix(features, theta) / tau, axis=0)
        counts = np.bincount(assignment.c, minlength=b)
        grad += (counts / (n * tau))[:, None] * (q.T @ features)
    return grad


def full_pool_loss(pool: FeaturePool, params: SelectionParams, config: OptimizerConfig) -> LossBreakdown:
    """Loss over the whole pool with a freshly computed argmax assignment."""
    return compute_loss(pool, params, config, assign(pool, params))


def _draw_batch(rng: np.random.Generator, n: int, subsample_m: Union[int, str]) -> Optional[np.ndarray]:
    if subsample_m == "all" or subsample_m >= n:
        return None
    return np.sort(rng.choice(n, size=subsample_m, replace=False))


def optimize(pool: FeaturePool, config: OptimizerConfig, b: int) -> OptimizationTrace:
    """Run T iterations of subsample -> assign -> loss/gradient -> Adam -> project."""
    _check_budget(pool.n, b)
    check_degenerate(b, config.regularizer)
    if config.subsample_m != "all" and config.subsample_m > pool.n:
        raise ValidationError(f"subsample_m={config.subsample_m} exceeds pool size {pool.n}")

    params = init_params(pool, b, config.seed)
    initial = params.copy()
    # independent stream for batches so the init draw matches init_params(seed)
    batch_rng = np.random.default_rng([config.seed, 1])
    adam = Adam(config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
    frozen = assign(pool, params) if config.ci_update == "frozen_at_init" else None

    features = pool.as_float64()
    initial_full = full_pool_loss(pool, params, config)
    losses: List[LossBreakdown] = []
    batch_sizes: List[int] = []
    norm_errors: List[float] = []
    for it in range(config.iterations):
        rows = _draw_batch(batch_rng, pool.n, config.subsample_m)
        batch = features if rows is None else features[rows]
        if frozen is None:
            assignment = assign(batch, params)
        else:
            assignment = frozen if rows is None else frozen.restrict(rows)

        loss = compute_loss(batch, params, config, assignment)
        grad = loss_gradient(batch, params, config, assignment)
        params = SelectionParams(theta=project_rows(adam.step(params.theta, grad)))
        losses.append(loss)
        batch_sizes.append(batch.shape[0])
        norm_errors.append(float(np.abs(np.linalg.norm(params.theta, axis=1) - 1.0).max()))
        if it % LOG_EVERY == 0:
            logger.debug(f"iteration {it}: loss={loss.total:.6f} (d={loss.d_term:.6f}, r={loss.r_term:.6f})")

    final_full = full_pool_loss(pool, params, config)
    logger.info(
        f"Optimized B={b} over {config.iterations} iterations: "
        f"loss {initial_full.total:.6f} -> {final_full.total:.6f}")
    return OptimizationTrace(
        losses=losses,
        final_params=params,
        initial_params=initial,
        initial_full_loss=initial_full,
        final_full_loss=final_full,
        batch_sizes=batch_sizes,
        norm_errors=norm_errors,
    )


def select_activeft(pool: FeaturePool, b: int, config: OptimizerConfig):
    """optimize then match: the full ActiveFT selection. Returns (SelectionResult, trace)."""
    from selection.matching import match

    trace = optimize(pool, config, b)
    result = match(pool, trace.final_params, method="activeft", seed=config.seed,
                   config_digest=config.digest())
    return result, trace
