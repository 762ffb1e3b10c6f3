"""
Experiment service for ActiveFT selection
Method-vs-baseline comparisons and ablation sweeps over seeded synthetic pools
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from config import Config
from selection.baselines import select_fds, select_kmeans, select_random
from selection.core_model import assumption_diagnostic
from selection.matching import METHODS, SelectionResult
from selection.metrics import diversity_stats, emd_closed_form
from selection.optimizer import CI_UPDATES, REGULARIZERS, OptimizerConfig, select_activeft
from services.feature_store import FeaturePool, SyntheticSpec, make_synthetic_pool
from utils.errors import BudgetError, ValidationError

logger = logging.getLogger(__name__)

AXES = ("temperature", "ci_update", "regularizer")
TEMPERATURE_SWEEP = (0.04, 0.07, 0.2, 0.5)
METRIC_KEYS = ("emd", "min_pairwise", "mean_nearest")


@dataclass
class ExperimentTable:
    """Per-cell rows plus mean/std aggregates per group (method or ablation value)."""

    kind: str
    group_key: str
    rows: List[Dict[str, Any]] = field(default_factory=list)
    aggregates: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "group_key": self.group_key,
                "rows": self.rows, "aggregates": self.aggregates}

    def aggregate(self, group) -> Dict[str, Any]:
        for row in self.aggregates:
            if row[self.group_key] == group:
                return row
        raise KeyError(group)


def run_method(pool: FeaturePool, method: str, b: int, seed: int,
               config: Optional[OptimizerConfig] = None) -> SelectionResult:
    """Dispatch one selection method; activeft uses `config` with its seed replaced."""
    if method == "random":
        return select_random(pool, b, seed)
    if method == "fds":
        return select_fds(pool, b, seed)
    if method == "kmeans":
        return select_kmeans(pool, b, seed)
    if method == "activeft":
        config = (config or OptimizerConfig()).with_seed(seed)
        selection, trace = select_activeft(pool, b, config)
        selection.extras["trace"] = trace
        return selection
    raise ValidationError(f"unknown method {method!r}, expected one of {METHODS}")


def _metrics(pool: FeaturePool, selection: SelectionResult) -> Dict[str, Any]:
    emd, _ = emd_closed_form(pool, selection)
    min_pairwise, mean_nearest = diversity_stats(pool, selection)
    return {"emd": emd, "min_pairwise": min_pairwise, "mean_nearest": mean_nearest}


def _aggregate(rows: List[Dict[str, Any]], group_key: str, groups: Sequence) -> List[Dict[str, Any]]:
    out = []
    for group in groups:
        cells = [r for r in rows if r[group_key] == group]
        agg: Dict[str, Any] = {group_key: group, "n": len(cells)}
        for key in METRIC_KEYS + ("assumption_ratio",):
            values = [r[key] for r in cells if r.get(key) is not None]
            if not values:
                continue
            agg[f"{key}_mean"] = float(np.mean(values))
            agg[f"{key}_std"] = float(np.std(values))
        out.append(agg)
    return out


def _run_cells(cells: List[tuple], fn, threads: Optional[int]) -> Dict[tuple, Dict[str, Any]]:
    """Evaluate independent cells, keyed so assembly does not depend on completion order."""
    workers = min(Config.threads(threads), max(1, len(cells)))
    if workers == 1:
        return {cell: fn(*cell) for cell in cells}
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {cell: executor.submit(fn, *cell) for cell in cells}
        return {cell: future.result() for cell, future in futures.items()}


def _check(spec: SyntheticSpec, b: int, seeds: Sequence[int]) -> FeaturePool:
    if not seeds:
        raise ValidationError("at least one seed is required")
    pool = make_synthetic_pool(spec)
    if b < 1 or b > pool.n:
        raise BudgetError(f"budget b={b} must lie in [1, {pool.n}]")
    return pool


def run_comparison(spec: SyntheticSpec, b: int, methods: Sequence[str], seeds: Sequence[int],
                   config: Optional[OptimizerConfig] = None, threads: Optional[int] = None) -> ExperimentTable:
    """EMD and diversity per (method, seed) on one synthetic pool, aggregated per method."""
    for method in methods:
        if method not in METHODS:
            raise ValidationError(f"unknown method {method!r}, expected one of {METHODS}")
    pool = _check(spec, b, seeds)
    config = config or OptimizerConfig()

    def cell(method: str, seed: int) -> Dict[str, Any]:
        selection = run_method(pool, method, b, seed, config)
        return {"method": method, "seed": seed, "indices": selection.sorted_indices(), **_metrics(pool, selection)}

    results = _run_cells([(m, s) for m in methods for s in seeds], cell, threads)
    table = ExperimentTable(kind="comparison", group_key="method")
    table.rows = [results[(m, s)] for m in methods for s in seeds]
    table.aggregates = _aggregate(table.rows, "method", list(methods))
    logger.info(f"Comparison over {len(methods)} methods x {len(seeds)} seeds finished")
    return table


def _ablation_config(base: OptimizerConfig, axis: str, value) -> OptimizerConfig:
    if axis == "temperature":
        return replace(base, tau=float(value))
    if axis == "ci_update":
        if value not in CI_UPDATES:
            raise ValidationError(f"unknown ci_update {value!r}")
        return replace(base, ci_update=value)
    if value not in REGULARIZERS:
        raise ValidationError(f"unknown regularizer {value!r}")
    return replace(base, regularizer=value)


def run_ablation(spec: SyntheticSpec, b: int, axis: str, values: Sequence, seeds: Sequence[int],
                 config: Optional[OptimizerConfig] = None, threads: Optional[int] = None) -> ExperimentTable:
    """ActiveFT under each value of one ablation axis; rows also carry entry0/entry1 of the
    assumption diagnostic on the optimized parameters."""
    if axis not in AXES:
        raise ValidationError(f"unknown ablation axis {axis!r}, expected one of {AXES}")
    if not values:
        raise ValidationError("at least one ablation value is required")
    pool = _check(spec, b, seeds)
    base = config or OptimizerConfig()
    configs = {value: _ablation_config(base, axis, value) for value in values}

    def cell(value, seed: int) -> Dict[str, Any]:
        cfg = configs[value].with_seed(seed)
        selection = run_method(pool, "activeft", b, seed, cfg)
        trace = selection.extras["trace"]
        ratio = None
        if b >= 2:
            ratio = assumption_diagnostic(pool, trace.final_params, cfg.tau, 2).ratio()
        return {"value": value, "seed": seed, "indices": selection.sorted_indices(),
                "final_loss": trace.final_full_loss.total, "assumption_ratio": ratio,
                **_metrics(pool, selection)}

    results = _run_cells([(v, s) for v in values for s in seeds], cell, threads)
    table = ExperimentTable(kind=f"ablation:{axis}", group_key="value")
    table.rows = [results[(v, s)] for v in values for s in seeds]
    table.aggregates = _aggregate(table.rows, "value", list(values))
    logger.info(f"Ablation over {axis} ({len(values)} values x {len(seeds)} seeds) finished")
    return table
