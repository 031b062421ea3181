"""End-to-end scenario runners returning structured reports."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    Dataset,
    Hierarchical,
    Hierarchy,
    MeasurementPlan,
    SimpleRandomSample,
    StudyFrame,
    plan_cost,
)
from .errors import Infeasible, InvalidGrid, PoolExhausted
from .expected_utility import (
    MCConfig,
    UtilityEstimate,
    child_rng,
    derived_seed,
    expected_utility_design,
    expected_utility_plan,
)
from .models import LinReg, NestedNormalMean, NormalMean, TwoStateCTMC
from .search import (
    CandidatePool,
    binary_search_sample_size,
    design_search_units,
    exhaustive_best,
    exchange_improve,
    extreme_units,
    greedy_augment,
    two_point_targets,
)
from .utility import DOptimality, NegPosteriorVariance

TAG_N = 11
TAG_TRUTH = 12
TAG_ROUND = 13

ALLOCATION_LIMIT = 10_000
SUBSAMPLE_STRATEGIES = ("srs", "extreme", "greedy-dopt", "exchange-dopt", "exhaustive-dopt", "design-search")


@dataclass(frozen=True)
class Row:
    label: str
    n_or_delta: float
    utility: float
    se: float
    cost: float
    plan: tuple | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"label": self.label, "n_or_delta": self.n_or_delta, "utility": self.utility, "se": self.se,
               "cost": self.cost}
        if self.plan is not None:
            out["plan"] = [list(t) for t in self.plan]
        if self.extra:
            out["extra"] = dict(self.extra)
        return out


@dataclass(frozen=True)
class ScenarioReport:
    scenario: str
    inputs: dict
    rows: tuple[Row, ...]
    winner: str
    seed: int
    details: dict = field(default_factory=dict)

    def row(self, label: str) -> Row:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    @property
    def winner_row(self) -> Row:
        return self.row(self.winner)

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "inputs": self.inputs,
            "rows": [r.to_json() for r in self.rows],
            "winner": self.winner,
            "details": self.details,
        }

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "n_or_delta", "utility", "se", "cost"])
        for r in self.rows:
            w.writerow([r.label, repr(float(r.n_or_delta)), repr(float(r.utility)), repr(float(r.se)),
                        repr(float(r.cost))])
        return buf.getvalue()


def _argmax_label(rows: Sequence[Row]) -> str:
    best = None
    for r in rows:
        if best is None or r.utility > best.utility:
            best = r
    return best.label


def _plan_tuple(plan: MeasurementPlan) -> tuple:
    return tuple(tuple(int(x) for x in t) for t in plan.array)


# --------------------------------------------------------------------------
# Sample size
# --------------------------------------------------------------------------


def run_sample_size(model: NormalMean, target_variance: float, n_max: int, cfg: MCConfig,
                    probe: Sequence[int] = (1, 2, 4, 8)) -> ScenarioReport:
    """Smallest number of units whose expected posterior variance meets the target.

    For each candidate ``n``: draw the parameter from the prior, simulate
    ``n`` observations, compute the posterior variance, and average over
    draws; then binary-search ``n``.  Each ``n`` has its own fixed seed so
    the searched curve is deterministic.
    """
    frame = StudyFrame(max(int(n_max), 1))
    util = NegPosteriorVariance(0)

    def objective(n: int) -> UtilityEstimate:
        plan = MeasurementPlan.for_units(frame, range(n))
        return expected_utility_plan(plan, model, util, None, cfg.with_seed(derived_seed(cfg.seed, TAG_N, n)))

    cache: dict[int, UtilityEstimate] = {}

    def cached(n: int) -> UtilityEstimate:
        if n not in cache:
            cache[n] = objective(n)
        return cache[n]

    n_star, _ = binary_search_sample_size(cached, -float(target_variance), int(n_max))
    for n in probe:
        if 0 <= n <= n_max:
            cached(n)
    rows = tuple(
        Row(f"n={n}", n, cache[n].mean, cache[n].std_error, float(n), extra={"posterior_variance": -cache[n].mean})
        for n in sorted(cache)
    )
    curve = {str(n): -cache[n].mean for n in sorted(cache)}
    return ScenarioReport(
        "sample-size",
        {"target_variance": float(target_variance), "n_max": int(n_max), "outer_draws": cfg.outer_draws},
        rows, f"n={n_star}", cfg.seed, {"n": n_star, "curve": curve},
    )


# --------------------------------------------------------------------------
# Hierarchical sizing
# --------------------------------------------------------------------------


def allocation_units(branching: Sequence[int], allocation: Sequence[int]) -> list[int]:
    """Units of a balanced allocation: the first ``a_k`` groups at each level.

    Both sequences list the top level first; the last entry counts units
    per lowest cluster.
    """
    strides = [int(np.prod(branching[i + 1:])) for i in range(len(branching))]
    return sorted(
        sum(i * s for i, s in zip(idx, strides))
        for idx in itertools.product(*[range(a) for a in allocation])
    )


def run_hierarchical_sizing(model: NestedNormalMean, branching: Sequence[int], level_costs: Sequence[float],
                            budget: float, cfg: MCConfig, utility=None) -> ScenarioReport:
    """Best balanced allocation of clusters and units under a cluster-cost budget.

    ``level_costs[0]`` is the cost per unit, ``level_costs[k]`` the cost per
    activated cluster on level ``k + 1``.  All allocations are scored when
    there are at most 10^4 of them; beyond that a coordinate-ascent search
    from the smallest allocation is used.
    """
    branching = [int(b) for b in branching]
    if len(branching) not in (2, 3):
        raise ValueError("hierarchical sizing supports 2 or 3 levels")
    if len(level_costs) != len(branching):
        raise ValueError("one cost per level is required")
    utility = utility or NegPosteriorVariance(0)
    frame = StudyFrame(int(np.prod(branching)), hierarchy=Hierarchy.nested(branching))
    cost_model = Hierarchical(tuple(float(c) for c in level_costs))

    cache: dict[tuple, tuple[MeasurementPlan, float]] = {}

    def plan_of(a: tuple) -> tuple[MeasurementPlan, float]:
        if a not in cache:
            p = MeasurementPlan.for_units(frame, allocation_units(branching, a))
            cache[a] = (p, plan_cost(p, cost_model))
        return cache[a]

    scored: dict[tuple, UtilityEstimate] = {}

    def score(a: tuple) -> UtilityEstimate:
        if a not in scored:
            scored[a] = expected_utility_plan(plan_of(a)[0], model, utility, None, cfg)
        return scored[a]

    n_configs = int(np.prod(branching))
    if n_configs <= ALLOCATION_LIMIT:
        method = "enumeration"
        feasible = [a for a in itertools.product(*[range(1, b + 1) for b in branching])
                    if plan_of(a)[1] <= budget]
        if not feasible:
            raise Infeasible(f"no allocation fits the budget {budget}")
        for a in feasible:
            score(a)
    else:
        method = "coordinate-ascent"
        a = tuple(1 for _ in branching)
        if plan_of(a)[1] > budget:
            raise Infeasible(f"no allocation fits the budget {budget}")
        score(a)
        while True:
            # grow one coordinate at a time, taking the best affordable step
            best = None
            for k in range(len(a)):
                if a[k] >= branching[k]:
                    continue
                b = a[:k] + (a[k] + 1,) + a[k + 1:]
                if plan_of(b)[1] <= budget and (best is None or score(b).mean > score(best).mean):
                    best = b
            if best is None or score(best).mean < score(a).mean:
                break
            a = best
        feasible = sorted(scored)
    rows = []
    for a in feasible:
        est = score(a)
        p, c = plan_of(a)
        rows.append(Row("a=" + "x".join(map(str, a)), len(p), est.mean, est.std_error, c,
                        extra={"allocation": list(a)}))
    winner = _argmax_label(rows)
    return ScenarioReport(
        "hierarchical-sizing",
        {"branching": branching, "level_costs": [float(c) for c in level_costs], "budget": float(budget)},
        tuple(rows), winner, cfg.seed, {"method": method, "configurations": n_configs},
    )


# --------------------------------------------------------------------------
# Subsample selection
# --------------------------------------------------------------------------


def _features(model: LinReg) -> np.ndarray:
    W = model.covariates
    keep = [j for j in range(W.shape[1]) if np.ptp(W[:, j]) > 0]
    return W[:, keep] if keep else W


def run_subsample_selection(model: LinReg, n1: int, strategies: Sequence[str], cfg: MCConfig,
                            prior_data: Dataset | None = None, utility=None, frame: StudyFrame | None = None,
                            targets=None) -> ScenarioReport:
    """Choose ``n1`` of the first-stage units for the expensive outcome.

    Every strategy returns exactly ``n1`` units and all are scored with the
    same utility on the same seed schedule.
    """
    unknown = set(strategies) - set(SUBSAMPLE_STRATEGIES)
    if unknown:
        raise ValueError(f"unknown strategies {sorted(unknown)}")
    utility = utility or DOptimality()
    N = model.n_units
    if not 0 <= n1 <= N:
        raise ValueError(f"n1={n1} outside 0..{N}")
    var = model.outcome_variable
    if frame is None:
        frame = prior_data.frame if prior_data is not None else StudyFrame(N, n_variables=var + 1)
    pool = CandidatePool.units(frame, variable=var, max_size=n1, exact_size=True)

    def objective(plan: MeasurementPlan) -> UtilityEstimate:
        return expected_utility_plan(plan, model, utility, prior_data, cfg)

    feats = _features(model)
    rows = []
    for s in strategies:
        extra = {}
        if s == "srs":
            est = expected_utility_design(SimpleRandomSample(frame, n1, var), model, utility, prior_data, cfg)
            rows.append(Row(s, n1, est.mean, est.std_error, float(n1)))
            continue
        if s == "extreme":
            plan = MeasurementPlan.for_units(frame, extreme_units(feats, n1), var)
        elif s == "design-search":
            t = targets
            if t is None:
                if feats.shape[1] != 1:
                    raise ValueError("design-search needs explicit targets for more than one covariate")
                t = two_point_targets(feats[:, 0], n1)
            plan = MeasurementPlan.for_units(frame, design_search_units(t, feats), var)
        else:
            if s == "exhaustive-dopt":
                res = exhaustive_best(pool, objective)
            else:
                res = greedy_augment(pool, objective)
                if s == "exchange-dopt":
                    res = exchange_improve(res, pool, objective)
            plan = res.plan
            extra = {"evaluations": res.evaluations}
        est = objective(plan)
        rows.append(Row(s, n1, est.mean, est.std_error, float(n1), _plan_tuple(plan), extra))
    return ScenarioReport(
        "subsample-selection",
        {"n_units": N, "n1": int(n1), "strategies": list(strategies), "utility": type(utility).__name__},
        tuple(rows), _argmax_label(rows), cfg.seed,
    )


# --------------------------------------------------------------------------
# Markov timing
# --------------------------------------------------------------------------


def timing_plan(n_units: int, n1: int, delta: float) -> MeasurementPlan:
    """``n1`` equidistant observations, ``delta`` apart, on each of ``n_units`` units."""
    frame = StudyFrame(n_units, time_grid=tuple(float(delta) * k for k in range(n1)))
    return MeasurementPlan.full(frame)


def check_timing_grid(budget: int, n1_values: Sequence[int], deltas: Sequence[float]) -> None:
    for n1 in n1_values:
        if n1 < 1 or budget % n1:
            raise InvalidGrid(f"budget {budget} is not a multiple of n1={n1}")
    for d in deltas:
        if not d > 0:
            raise InvalidGrid(f"spacing must be positive, got {d}")


def run_markov_timing(model: TwoStateCTMC, budget: int, n1_values: Sequence[int], deltas: Sequence[float],
                      cfg: MCConfig, utility=None) -> ScenarioReport:
    """Utility surface over (observations per unit, spacing) at a fixed total.

    Each cell observes ``budget / n1`` units ``n1`` times with spacing
    ``delta``.  All cells share one seed schedule, so differences between
    cells are not blurred by independent noise.
    """
    utility = utility or DOptimality()
    budget = int(budget)
    check_timing_grid(budget, n1_values, deltas)
    rows = []
    surface = []
    for n1 in n1_values:
        line = []
        for d in deltas:
            est = expected_utility_plan(timing_plan(budget // n1, n1, d), model, utility, None, cfg)
            rows.append(Row(f"n1={n1},delta={d!r}", float(d), est.mean, est.std_error, float(budget),
                            extra={"n1": int(n1), "n_units": budget // n1}))
            line.append(est.mean)
        surface.append(line)
    winner = _argmax_label(rows)
    w = next(r for r in rows if r.label == winner)
    return ScenarioReport(
        "markov-timing",
        {"budget": budget, "n1_values": [int(n) for n in n1_values], "deltas": [float(d) for d in deltas]},
        tuple(rows), winner, cfg.seed,
        {"surface": surface, "argmax": {"n1": w.extra["n1"], "delta": w.n_or_delta}},
    )


# --------------------------------------------------------------------------
# Re-measurement
# --------------------------------------------------------------------------


def run_remeasurement(model: LinReg, rounds: int, n1: int, cfg: MCConfig, strategy: str = "greedy",
                      utility=None, allow_revisit: bool = True, theta_true=None) -> ScenarioReport:
    """Repeated selection: pick ``n1`` units, measure them, fold the data in, repeat.

    Round ``r`` measures at time index ``r``.  With ``allow_revisit=False`` a
    unit measured once is not offered again.  A one-shot selection of
    ``rounds * n1`` units is reported alongside for comparison.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    if strategy not in ("greedy", "exchange", "exhaustive"):
        raise ValueError(f"unknown strategy {strategy!r}")
    utility = utility or DOptimality()
    N = model.n_units
    var = model.outcome_variable
    frame = StudyFrame(N, n_variables=var + 1, time_grid=tuple(float(r) for r in range(rounds)))
    theta = (model.sample_prior(child_rng(cfg.seed, TAG_TRUTH)) if theta_true is None
             else np.asarray(theta_true, dtype=float))
    data = Dataset.empty(frame)
    used: set[int] = set()
    rows = []
    cumulative: set = set()
    for r in range(rounds):
        avail = [u for u in range(N) if allow_revisit or u not in used]
        if len(avail) < n1:
            raise PoolExhausted(f"round {r}: {len(avail)} units left, {n1} needed")
        pool = CandidatePool.units(frame, avail, variable=var, time_index=r, max_size=n1, exact_size=True)
        seen = data

        def objective(plan, seen=seen):
            return expected_utility_plan(plan, model, utility, seen, cfg)

        if strategy == "exhaustive":
            res = exhaustive_best(pool, objective)
        else:
            res = greedy_augment(pool, objective)
            if strategy == "exchange":
                res = exchange_improve(res, pool, objective)
        new = model.simulate_data(theta, res.plan, child_rng(cfg.seed, TAG_ROUND, r), data)
        data = data.merge(new)
        units = sorted(int(u) for u in res.plan.units)
        used |= set(units)
        cumulative |= res.plan.entries
        rows.append(Row(f"round={r}", r, res.utility, res.std_error, float(n1), _plan_tuple(res.plan),
                        {"units": units}))
    details = {"cumulative_plan": [list(t) for t in sorted(cumulative)], "theta_true": [float(x) for x in theta]}
    if rounds * n1 <= N:
        one_frame = StudyFrame(N, n_variables=var + 1)
        pool = CandidatePool.units(one_frame, variable=var, max_size=rounds * n1, exact_size=True)
        single = greedy_augment(pool, lambda p: expected_utility_plan(p, model, utility, None, cfg))
        details["single_round"] = {"utility": single.utility, "se": single.std_error,
                                   "units": [int(u) for u in single.plan.units]}
        details["sequential_minus_single"] = rows[-1].utility - single.utility
    return ScenarioReport(
        "remeasurement",
        {"rounds": int(rounds), "n1": int(n1), "strategy": strategy, "allow_revisit": bool(allow_revisit)},
        tuple(rows), rows[-1].label, cfg.seed, details,
    )
