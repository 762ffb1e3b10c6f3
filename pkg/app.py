"""
ActiveFT selection - command line entry point
Pool synthesis, selection, evaluation, diagnostics and experiment suites
"""

import argparse
import logging
import math
import sys
import time
from typing import List, Optional

from config import Config
from selection.baselines import KMEANS_MAX_ITERS, select_fds, select_kmeans, select_random
from selection.core_model import assumption_diagnostic
from selection.matching import METHODS, SelectionResult
from selection.metrics import build_diagnostics
from selection.optimizer import (
    CI_UPDATES, REGULARIZERS, OptimizerConfig, check_degenerate, init_params, optimize, select_activeft,
)
from services.experiments import AXES, TEMPERATURE_SWEEP, run_ablation, run_comparison
from services.feature_store import SyntheticSpec, load_pool, make_synthetic_pool, save_pool
from utils.audit_log import write_event
from utils.errors import BudgetError, ValidationError
from utils.report import build_report, read_indices, write_indices, write_report

logger = logging.getLogger("activeft")

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2


def resolve_budget(n: int, b: Optional[int] = None, ratio: Optional[float] = None) -> int:
    """Budget from an explicit count or a pool ratio (rounded down, at least 1)."""
    if ratio is not None:
        if not 0 < ratio <= 1:
            raise BudgetError(f"ratio must lie in (0, 1], got {ratio}")
        b = max(1, math.floor(ratio * n + 1e-9))
    if b is None:
        raise BudgetError("either a budget count or a ratio is required")
    if b < 1 or b > n:
        raise BudgetError(f"budget b={b} must lie in [1, {n}]")
    return b


def _subsample(value: str):
    if value == "all":
        return "all"
    try:
        m = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer or 'all', got {value!r}")
    if m < 1:
        raise argparse.ArgumentTypeError("subsample size must be positive")
    return m


def _csv_list(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def _seed(value: str) -> int:
    try:
        seed = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer seed, got {value!r}")
    if seed < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return seed


def _int_list(value: str) -> List[int]:
    try:
        items = [int(item) for item in _csv_list(value)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}")
    if not items or min(items) < 0:
        raise argparse.ArgumentTypeError(f"expected non-negative integers, got {value!r}")
    return items


def _optimizer_config(args, seed: int) -> OptimizerConfig:
    return OptimizerConfig(
        tau=args.tau,
        lambda_=args.balance,
        lr=args.lr,
        iterations=args.iterations,
        subsample_m=args.subsample,
        ci_update=args.ci_update,
        regularizer=args.regularizer,
        seed=seed,
    )


def _elapsed_ms(start: float, args) -> Optional[float]:
    if args.no_timing:
        return None
    return round((time.perf_counter() - start) * 1000.0, 3)


# Commands

def cmd_synth(args) -> int:
    """Generate a synthetic pool and write it to --out"""
    sizes = tuple(args.cluster_sizes) if args.cluster_sizes else None
    spec = SyntheticSpec(
        n_clusters=args.clusters,
        points_per_cluster=args.per_cluster,
        dim=args.dim,
        spread=args.spread,
        seed=args.seed,
        cluster_sizes=sizes,
    )
    pool = make_synthetic_pool(spec)
    save_pool(pool, args.out, args.format)
    logger.info(f"Wrote synthetic {pool.n}x{pool.dim} pool to {args.out}")
    return EXIT_OK


def cmd_select(args) -> int:
    """Select B pool items with ActiveFT or a baseline; write indices and a report"""
    start = time.perf_counter()
    pool = load_pool(args.pool, args.format, args.normalize)
    b = resolve_budget(pool.n, args.b, args.ratio)

    loss = None
    if args.method == "activeft":
        config = _optimizer_config(args, args.seed)
        check_degenerate(b, config.regularizer)
        selection, trace = select_activeft(pool, b, config)
        config_block = config.to_dict()
        loss = trace.summary()
    elif args.method == "random":
        selection = select_random(pool, b, args.seed)
        config_block = {"seed": args.seed}
    elif args.method == "fds":
        selection = select_fds(pool, b, args.seed, first=args.first_index)
        config_block = {"seed": args.seed, "first_index": args.first_index}
    else:
        selection = select_kmeans(pool, b, args.seed, max_iters=args.max_iters)
        config_block = {"seed": args.seed, "max_iters": args.max_iters}

    diagnostics = build_diagnostics(pool, selection, loss_summary=loss)
    write_indices(selection.indices, args.out)
    report = build_report(
        command="select",
        method=args.method,
        config=config_block,
        config_digest=selection.config_digest or None,
        seed=args.seed,
        n=pool.n,
        b=b,
        metrics=diagnostics.to_dict(),
        loss=loss,
        wall_time_ms=_elapsed_ms(start, args),
    )
    if args.report:
        write_report(report, args.report)
    logger.info(f"Selected {b} of {pool.n} items with {args.method}: EMD={diagnostics.emd:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    """Evaluate an indices file against a pool (closed-form EMD, diversity, optional oracle)"""
    pool = load_pool(args.pool, args.format, args.normalize)
    indices = read_indices(args.indices, pool.n)
    selection = SelectionResult(indices=indices, method="external", seed=0)
    diagnostics = build_diagnostics(pool, selection, oracle=args.oracle)
    report = build_report(command="eval", method=None, config=None, config_digest=None, seed=None,
                          n=pool.n, b=selection.b, metrics=diagnostics.to_dict())
    write_report(report, args.report)
    logger.info(f"EMD of {selection.b} selected items: {diagnostics.emd:.6f}")
    return EXIT_OK


def cmd_diag(args) -> int:
    """Top-k mean exponential similarity for random-init or optimized parameters"""
    pool = load_pool(args.pool, args.format, args.normalize)
    b = resolve_budget(pool.n, args.b, args.ratio)
    if args.k > b:
        raise ValidationError(f"k={args.k} exceeds the budget B={b}")
    loss = None
    if args.from_select:
        config = _optimizer_config(args, args.seed)
        trace = optimize(pool, config, b)
        params = trace.final_params
        loss = trace.summary()
        source = "optimized"
    else:
        params = init_params(pool, b, args.seed)
        source = "random_init"
    stats = assumption_diagnostic(pool, params, args.tau, args.k)
    report = build_report(
        command="diag",
        params_source=source,
        seed=args.seed,
        b=b,
        tau=args.tau,
        k=args.k,
        topk_mean_exp_sim=stats.topk_mean_exp_sim,
        top1_ratio=stats.ratio() if args.k >= 2 else None,
        loss=loss,
    )
    write_report(report, args.report)
    return EXIT_OK


def cmd_experiment(args) -> int:
    """Run a comparison or ablation suite on a synthetic pool"""
    start = time.perf_counter()
    sizes = tuple(args.cluster_sizes) if args.cluster_sizes else None
    spec = SyntheticSpec(
        n_clusters=args.clusters,
        points_per_cluster=args.per_cluster,
        dim=args.dim,
        spread=args.spread,
        seed=args.pool_seed,
        cluster_sizes=sizes,
    )
    seeds = args.seed_list if args.seed_list else list(range(args.seeds))
    config = _optimizer_config(args, 0)

    if args.kind == "comparison":
        methods = _csv_list(args.methods)
        table = run_comparison(spec, args.b, methods, seeds, config, threads=args.threads)
    else:
        if args.axis is None:
            raise ValidationError("--axis is required for an ablation")
        if args.values:
            values = _csv_list(args.values)
        elif args.axis == "temperature":
            values = list(TEMPERATURE_SWEEP)
        elif args.axis == "ci_update":
            values = list(CI_UPDATES)
        else:
            values = list(REGULARIZERS)
        if args.axis == "temperature":
            try:
                values = [float(v) for v in values]
            except ValueError as e:
                raise ValidationError(f"temperature values must be numbers: {e}") from e
        table = run_ablation(spec, args.b, args.axis, values, seeds, config, threads=args.threads)

    report = build_report(
        command="experiment",
        spec={"n_clusters": spec.n_clusters, "points_per_cluster": spec.points_per_cluster,
              "dim": spec.dim, "spread": spec.spread, "seed": spec.seed, "cluster_sizes": spec.cluster_sizes},
        b=args.b,
        seeds=seeds,
        config=config.to_dict(),
        table=table.to_dict(),
        wall_time_ms=_elapsed_ms(start, args),
    )
    write_report(report, args.report)
    return EXIT_OK


# Parser

def _add_pool_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--pool", required=True, help="pool file (FPL1 binary or CSV)")
    parser.add_argument("--format", choices=("auto", "binary", "csv"), default="auto")
    parser.add_argument("--normalize", action="store_true", help="L2-normalize rows on load")


def _add_budget_args(parser: argparse.ArgumentParser, required: bool = True) -> None:
    group = parser.add_mutually_exclusive_group(required=required)
    group.add_argument("--b", type=int, help="budget as an item count")
    group.add_argument("--ratio", type=float, help="budget as a fraction of the pool")


def _add_optimizer_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("optimizer")
    group.add_argument("--tau", type=float, default=Config.TAU)
    group.add_argument("--lambda", dest="balance", type=float, default=1.0)
    group.add_argument("--lr", type=float, default=Config.LEARNING_RATE)
    group.add_argument("--iterations", type=int, default=Config.ITERATIONS)
    group.add_argument("--subsample", type=_subsample, default="all")
    group.add_argument("--ci-update", choices=CI_UPDATES, default="every_iteration")
    group.add_argument("--regularizer", choices=REGULARIZERS, default="activeft")


def _add_synthetic_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--clusters", type=int, required=True)
    parser.add_argument("--per-cluster", type=int, required=True)
    parser.add_argument("--dim", type=int, required=True)
    parser.add_argument("--spread", type=float, required=True)
    parser.add_argument("--cluster-sizes", type=_int_list, help="comma-separated per-cluster sizes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="activeft", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic pool")
    _add_synthetic_args(p)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("auto", "binary", "csv"), default="auto")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("select", help="select a subset of the pool")
    p.add_argument("--method", choices=METHODS, default="activeft")
    _add_pool_args(p)
    _add_budget_args(p)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True, help="indices file")
    p.add_argument("--report", help="report file")
    p.add_argument("--first-index", type=int, help="pin the first FDS center")
    p.add_argument("--max-iters", type=int, default=KMEANS_MAX_ITERS, help="k-means iteration cap")
    p.add_argument("--no-timing", action="store_true", help="record wall_time_ms as null")
    _add_optimizer_args(p)
    p.set_defaults(handler=cmd_select)

    p = sub.add_parser("eval", help="evaluate an indices file")
    _add_pool_args(p)
    p.add_argument("--indices", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--oracle", action="store_true", help="cross-check against the exact transport solver")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("diag", help="assumption diagnostic (top-k mean exponential similarity)")
    _add_pool_args(p)
    _add_budget_args(p)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--from-select", action="store_true", help="diagnose optimized instead of initial parameters")
    p.add_argument("--report", required=True)
    _add_optimizer_args(p)
    p.set_defaults(handler=cmd_diag)

    p = sub.add_parser("experiment", help="comparison or ablation suite")
    p.add_argument("--kind", choices=("comparison", "ablation"), required=True)
    _add_synthetic_args(p)
    p.add_argument("--pool-seed", type=_seed, default=0)
    p.add_argument("--b", type=int, required=True)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--axis", choices=AXES)
    p.add_argument("--values", help="comma-separated ablation values")
    p.add_argument("--seeds", type=int, default=20, help="use seeds 0..N-1")
    p.add_argument("--seed-list", type=_int_list, help="comma-separated explicit seeds")
    p.add_argument("--threads", type=int, default=None, help="worker threads (0 = auto)")
    p.add_argument("--report", required=True)
    p.add_argument("--no-timing", action="store_true")
    _add_optimizer_args(p)
    p.set_defaults(handler=cmd_experiment)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=Config.LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        code = args.handler(args)
    except ValidationError as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        code = EXIT_USAGE
    except OSError as e:
        logger.error(f"{args.command}: I/O failure: {e}")
        print(f"error: {e}", file=sys.stderr)
        code = EXIT_IO

    try:
        write_event({"command": args.command, "argv": argv, "exit_code": code})
    except OSError as e:
        logger.warning(f"audit log unavailable: {e}")
    return code


if __name__ == "__main__":
    sys.exit(main())
