"""Command-line entry point: ``odos evaluate|optimize|voi|scenario <name>``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    CTMCBlock,
    LinRegBlock,
    NestedBlock,
    NormalMeanBlock,
    RunConfig,
    build_cost,
    build_design,
    build_frame,
    build_mc,
    build_model,
    build_prior_data,
    build_utility,
    config_dict,
    load_config,
)
from .core import Hierarchical, MeasurementPlan, deterministic_plan, is_deterministic, plan_cost
from .errors import Infeasible, OdosError, ValidationError
from .expected_utility import expected_cost, expected_utility_design, expected_utility_plan
from .scenarios import (
    SUBSAMPLE_STRATEGIES,
    run_hierarchical_sizing,
    run_markov_timing,
    run_remeasurement,
    run_sample_size,
    run_subsample_selection,
)
from .search import (
    CandidatePool,
    design_search_select,
    exhaustive_best,
    exchange_improve,
    greedy_augment,
    two_point_targets,
)
from .utility import DOptimality, NegPosteriorVariance
from .voi import eligibility, voi_linear, voi_price

log = logging.getLogger("odos")

SCENARIOS = ("sample-size", "hierarchical-sizing", "subsample-selection", "markov-timing", "remeasurement")
TABLE_HEADER = ["label", "n_or_delta", "utility", "se", "cost"]


def _json_safe(x):
    """Replace non-finite floats by strings so reports are strict JSON."""
    if isinstance(x, dict):
        return {str(k): _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _table(rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    for r in rows:
        w.writerow([r[0]] + [repr(float(x)) for x in r[1:]])
    return buf.getvalue()


def _need(value, name: str):
    if value is None:
        raise ValidationError(f"search.{name}: required for this command")
    return value


def _plan_list(plan: MeasurementPlan) -> list[list[int]]:
    return [[int(x) for x in t] for t in plan.array]


# --------------------------------------------------------------------------
# Commands; each returns (result dict, table csv text)
# --------------------------------------------------------------------------


def cmd_evaluate(cfg: RunConfig, args, base: Path):
    if cfg.design is None:
        raise ValidationError("design: block required for evaluate")
    frame = build_frame(cfg)
    model = build_model(cfg)
    utility = build_utility(cfg)
    design = build_design(cfg, frame)
    data = build_prior_data(cfg, frame, base)
    mc = build_mc(cfg, args.seed, args.threads)
    est = expected_utility_design(design, model, utility, data, mc)
    cost_model = build_cost(cfg)
    cost = expected_cost(design, cost_model, data, mc) if cost_model is not None else None
    size = (len(deterministic_plan(design)) if is_deterministic(design)
            else getattr(design, "sample_size", None))
    if size is None:
        size = math.fsum(w * len(p) for p, w in design.plans)
    result = {"expected_utility": est.to_json(), "expected_cost": None if cost is None else cost.to_json()}
    table = _table([["design", size, est.mean, est.std_error, 0.0 if cost is None else cost.mean]])
    return result, table


def _objective(model, utility, data, mc):
    return lambda plan: expected_utility_plan(plan, model, utility, data, mc)


def cmd_optimize(cfg: RunConfig, args, base: Path):
    s = cfg.search
    if s is None:
        raise ValidationError("search: block required for optimize")
    frame = build_frame(cfg)
    model = build_model(cfg)
    utility = build_utility(cfg)
    data = build_prior_data(cfg, frame, base)
    mc = build_mc(cfg, args.seed, args.threads)
    strategy = args.strategy or s.strategy
    budget_n = args.budget_n if args.budget_n is not None else s.budget_n
    budget_cost = args.budget_cost if args.budget_cost is not None else s.budget_cost
    if budget_n is None and budget_cost is None:
        raise ValidationError("search.budget_n / search.budget_cost: a budget is required")
    cost_model = build_cost(cfg)
    if budget_cost is not None and cost_model is None:
        raise ValidationError("cost: block required for a cost budget")
    pool = CandidatePool.units(frame, variable=s.variable, time_index=s.time_index, max_size=budget_n,
                               max_cost=budget_cost, cost_model=cost_model)
    obj = _objective(model, utility, data, mc)
    workers = mc.workers or 1
    if strategy == "exhaustive":
        res = exhaustive_best(pool, obj, workers=workers)
    elif strategy == "design-search":
        if not isinstance(cfg.model, LinRegBlock):
            raise ValidationError("model.type: design-search matches on linear-regression covariates")
        if budget_n is None:
            raise ValidationError("search.budget_n: design-search needs a cardinality budget")
        W = model.covariates
        feats = W[:, [j for j in range(W.shape[1]) if np.ptp(W[:, j]) > 0]]
        if s.targets is not None:
            targets = np.array(s.targets)
        elif feats.shape[1] == 1:
            targets = two_point_targets(feats[:, 0], budget_n)
        else:
            raise ValidationError("search.targets: required unless there is exactly one covariate")
        plan = design_search_select(targets, feats, frame, s.variable, s.time_index)
        est = obj(plan)
        trace = [(0, len(plan), est.mean)]
        return _search_result(plan, est.mean, est.std_error, trace, 1, cost_model, strategy)
    else:
        res = greedy_augment(pool, obj, workers=workers)
        if strategy == "greedy+exchange":
            res = exchange_improve(res, pool, obj, best_improvement=s.best_improvement, workers=workers)
    return _search_result(res.plan, res.utility, res.std_error, res.trace, res.evaluations, cost_model, strategy)


def _search_result(plan, utility, se, trace, evaluations, cost_model, strategy):
    cost = plan_cost(plan, cost_model) if cost_model is not None else float(len(plan))
    result = {
        "strategy": strategy,
        "winner": {"plan": _plan_list(plan), "utility": utility, "std_error": se, "cost": cost},
        "trace": [list(t) for t in trace],
        "evaluations": evaluations,
    }
    rows = [[f"iter={i}", n, u, 0.0, 0.0] for i, n, u in trace]
    rows.append(["winner", len(plan), utility, se, cost])
    return result, _table(rows)


def cmd_voi(cfg: RunConfig, args, base: Path):
    if cfg.design is None:
        raise ValidationError("design: block required for voi")
    frame = build_frame(cfg)
    model = build_model(cfg)
    utility = build_utility(cfg)
    design = build_design(cfg, frame)
    data = build_prior_data(cfg, frame, base)
    mc = build_mc(cfg, args.seed, args.threads)
    curve = cfg.voi.curve if cfg.voi is not None else "v"
    if curve.strip() == "v":
        res = voi_linear(design, model, utility, data, mc)
    else:
        if not is_deterministic(design):
            raise ValidationError("voi.curve: price with a nonlinear curve needs a deterministic design")
        res = voi_price(deterministic_plan(design), model, utility, curve, data, mc)
    cost_model = build_cost(cfg)
    cost = expected_cost(design, cost_model, data, mc).mean if cost_model is not None else 0.0
    el = eligibility(None, cost, res)
    result = {"value": res.value, "baseline": res.baseline, "method": res.method, "std_error": res.std_error,
              "eligible": el.eligible, "margin": el.margin, "expected_cost": cost, "clamped": res.clamped}
    return result, _table([["voi", 0.0, res.value, res.std_error, cost]])


def cmd_scenario(cfg: RunConfig, args, base: Path):
    name = args.name
    s = cfg.search
    if s is None:
        raise ValidationError("search: block required for scenarios")
    model = build_model(cfg)
    mc = build_mc(cfg, args.seed, args.threads)
    if name == "sample-size":
        if not isinstance(cfg.model, NormalMeanBlock):
            raise ValidationError("model.type: sample-size needs normal_mean")
        rep = run_sample_size(model, _need(s.target_variance, "target_variance"), _need(s.n_max, "n_max"), mc)
    elif name == "hierarchical-sizing":
        if not isinstance(cfg.model, NestedBlock):
            raise ValidationError("model.type: hierarchical-sizing needs nested_normal_mean")
        branching = s.branching
        if branching is None and cfg.frame is not None and cfg.frame.hierarchy is not None:
            branching = cfg.frame.hierarchy.branching
        costs = s.level_costs
        cm = build_cost(cfg)
        if costs is None and isinstance(cm, Hierarchical):
            costs = list(cm.level_costs)
        budget = args.budget_cost if args.budget_cost is not None else s.budget_cost
        rep = run_hierarchical_sizing(model, _need(branching, "branching"), _need(costs, "level_costs"),
                                      _need(budget, "budget_cost"), mc, build_utility(cfg, NegPosteriorVariance(0)))
    elif name == "subsample-selection":
        if not isinstance(cfg.model, LinRegBlock):
            raise ValidationError("model.type: subsample-selection needs linreg")
        n1 = s.n1 if s.n1 is not None else (args.budget_n if args.budget_n is not None else s.budget_n)
        frame = build_frame(cfg) if cfg.frame is not None else None
        data = build_prior_data(cfg, frame, base) if frame is not None else None
        targets = np.array(s.targets) if s.targets is not None else None
        rep = run_subsample_selection(model, _need(n1, "n1"), s.strategies or list(SUBSAMPLE_STRATEGIES), mc,
                                      data, build_utility(cfg, DOptimality()), frame, targets)
    elif name == "markov-timing":
        if not isinstance(cfg.model, CTMCBlock):
            raise ValidationError("model.type: markov-timing needs ctmc")
        budget = args.budget_n if args.budget_n is not None else s.budget_n
        rep = run_markov_timing(model, _need(budget, "budget_n"), _need(s.n1_values, "n1_values"),
                                _need(s.deltas, "deltas"), mc, build_utility(cfg, DOptimality()))
    else:
        if not isinstance(cfg.model, LinRegBlock):
            raise ValidationError("model.type: remeasurement needs linreg")
        rep = run_remeasurement(model, _need(s.rounds, "rounds"), _need(s.n1, "n1"), mc, s.round_strategy,
                                build_utility(cfg, DOptimality()), s.allow_revisit)
    return rep.to_json(), rep.table_csv()


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration")
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--out", default=None, help="output prefix (default: config 'output')")
    common.add_argument("--no-timestamp", action="store_true", help="omit the timestamp from the report")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: ODOS_THREADS or CPUs)")
    common.add_argument("--strategy", choices=["exhaustive", "greedy", "greedy+exchange", "design-search"])
    common.add_argument("--budget-n", type=int, default=None)
    common.add_argument("--budget-cost", type=float, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="odos", description=__doc__)
    p.add_argument("--version", action="version", version=f"odos {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("evaluate", parents=[common], help="expected utility and cost of a design")
    sub.add_parser("optimize", parents=[common], help="search for the best plan under a budget")
    sub.add_parser("voi", parents=[common], help="value of information and eligibility of a design")
    sc = sub.add_parser("scenario", help="run a built-in scenario")
    scsub = sc.add_subparsers(dest="name", required=True)
    for name in SCENARIOS:
        scsub.add_parser(name, parents=[common])
    return p


COMMANDS = {"evaluate": cmd_evaluate, "optimize": cmd_optimize, "voi": cmd_voi, "scenario": cmd_scenario}


def run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ValidationError("--seed must be a 64-bit unsigned integer")
        seed = cfg.seed if args.seed is None else args.seed
        log.info("seed %d", seed)
        result, table = COMMANDS[args.command](cfg, args, Path(args.config).resolve().parent)
    except Infeasible as exc:
        print(f"odos: infeasible: {exc}", file=sys.stderr)
        return 2
    except (OdosError, ValueError, TypeError, OSError) as exc:
        print(f"odos: error: {exc}", file=sys.stderr)
        return 1
    command = args.command if args.command != "scenario" else f"scenario {args.name}"
    report = {"command": command, "version": __version__, "seed": seed, "config": config_dict(cfg),
              "result": result}
    if not args.no_timestamp:
        report["timestamp"] = datetime.now(timezone.utc).isoformat()
    prefix = Path(args.out if args.out is not None else cfg.output)
    if prefix.parent != Path(""):
        prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.report.json").write_text(json.dumps(_json_safe(report), indent=2, sort_keys=True) + "\n")
    Path(f"{prefix}.table.csv").write_text(table)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
