"""Direct search over deterministic plans built from candidate increments."""

from __future__ import annotations

import itertools
import math
import numbers
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import CostModel, MeasurementPlan, StudyFrame, plan_cost
from .errors import Infeasible, PoolExhausted, SpaceTooLarge
from .expected_utility import parallel_map

EXHAUSTIVE_LIMIT = 100_000
EXCHANGE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CandidatePool:
    """Disjoint plan increments and a budget on how many / how costly.

    ``max_size`` counts increments; ``max_cost`` caps ``plan_cost`` of the
    union (``<=``).  With ``exact_size`` a plan must use exactly
    ``max_size`` increments.
    """

    increments: tuple[MeasurementPlan, ...]
    max_size: int | None = None
    max_cost: float | None = None
    cost_model: CostModel | None = None
    exact_size: bool = False

    def __post_init__(self):
        incs = tuple(self.increments)
        object.__setattr__(self, "increments", incs)
        if not incs:
            raise ValueError("candidate pool is empty")
        frames = {id(p.frame) for p in incs}
        if len(frames) != 1:
            raise ValueError("all increments must share one study frame")
        seen: set = set()
        for p in incs:
            if not seen.isdisjoint(p.entries):
                raise ValueError("increments must be pairwise disjoint")
            seen |= p.entries
        if self.max_size is None and self.max_cost is None:
            raise ValueError("a budget (max_size or max_cost) is required")
        if self.max_size is not None and self.max_size < 0:
            raise ValueError("max_size must be non-negative")
        if self.max_cost is not None:
            if self.max_cost < 0:
                raise ValueError("max_cost must be non-negative")
            if self.cost_model is None:
                raise ValueError("a cost budget needs a cost model")
        if self.exact_size and self.max_size is None:
            raise ValueError("exact_size needs max_size")

    @classmethod
    def units(cls, frame: StudyFrame, units: Sequence[int] | None = None, variable: int = 0, time_index: int = 0,
              **budget) -> "CandidatePool":
        """One increment per unit: the single triple ``(unit, variable, time_index)``."""
        units = range(frame.n_units) if units is None else units
        return cls(tuple(MeasurementPlan.for_units(frame, [u], variable, time_index) for u in units), **budget)

    @property
    def frame(self) -> StudyFrame:
        return self.increments[0].frame

    def __len__(self) -> int:
        return len(self.increments)

    def plan(self, indices) -> MeasurementPlan:
        entries: set = set()
        for i in indices:
            entries |= self.increments[i].entries
        return MeasurementPlan(self.frame, entries)

    def feasible(self, indices, plan: MeasurementPlan | None = None) -> bool:
        n = len(indices)
        if self.max_size is not None and (n > self.max_size or (self.exact_size and n != self.max_size)):
            return False
        if self.max_cost is not None:
            plan = plan if plan is not None else self.plan(indices)
            if plan_cost(plan, self.cost_model) > self.max_cost:
                return False
        return True

    def fits(self, indices) -> bool:
        """Feasible except possibly for being too small under ``exact_size``."""
        n = len(indices)
        if self.max_size is not None and n > self.max_size:
            return False
        if self.max_cost is not None and plan_cost(self.plan(indices), self.cost_model) > self.max_cost:
            return False
        return True


@dataclass(frozen=True)
class SearchResult:
    plan: MeasurementPlan
    utility: float
    indices: tuple[int, ...]
    trace: tuple[tuple[int, int, float], ...] = ()
    evaluations: int = 0
    std_error: float = 0.0
    notes: dict = field(default_factory=dict)


def _value(out) -> tuple[float, float]:
    """``(mean, standard error)`` of an estimate, or ``(x, 0)`` for a plain number."""
    if isinstance(out, numbers.Real):
        return float(out), 0.0
    return float(out.mean), float(getattr(out, "std_error", 0.0))


class _Objective:
    """Wraps a plan objective; accepts estimates or plain numbers, counts calls."""

    def __init__(self, fn: Callable, pool: CandidatePool):
        self.fn = fn
        self.pool = pool
        self.calls = 0
        self._cache: dict[tuple[int, ...], tuple[float, float]] = {}

    def __call__(self, indices) -> float:
        return self.full(indices)[0]

    def full(self, indices) -> tuple[float, float]:
        key = tuple(sorted(indices))
        if key not in self._cache:
            self.calls += 1
            out = self.fn(self.pool.plan(key))
            self._cache[key] = _value(out)
        return self._cache[key]


def _result(obj: _Objective, indices, trace, **notes) -> SearchResult:
    key = tuple(sorted(indices))
    mean, se = obj.full(key)
    return SearchResult(obj.pool.plan(key), mean, key, tuple(trace), obj.calls, se, notes)


def _better(a: float, b: float, tol: float = 0.0) -> bool:
    """``a`` strictly beats ``b``; ``-inf`` never beats anything."""
    if a == -math.inf:
        return False
    if b == -math.inf:
        return True
    return a > b + tol


def exhaustive_best(pool: CandidatePool, objective: Callable, limit: int = EXHAUSTIVE_LIMIT,
                    workers: int = 1) -> SearchResult:
    """Best budget-feasible subset by full enumeration.

    Ties go to the lexicographically smallest index tuple.
    """
    n = len(pool)
    kmax = n if pool.max_size is None else min(pool.max_size, n)
    kmin = kmax if pool.exact_size else 0
    total = sum(math.comb(n, k) for k in range(kmin, kmax + 1))
    if total > limit:
        raise SpaceTooLarge(f"{total} candidate subsets exceed the limit {limit}")
    subsets = [c for k in range(kmin, kmax + 1) for c in itertools.combinations(range(n), k) if pool.feasible(c)]
    if not subsets:
        raise Infeasible("no subset satisfies the budget")
    obj = _Objective(objective, pool)
    values = parallel_map(obj, subsets, workers)
    best = None
    for c, v in sorted(zip(subsets, values), key=lambda cv: cv[0]):
        if best is None or _better(v, best[1]):
            best = (c, v)
    trace = [(0, len(best[0]), best[1])]
    return _result(obj, best[0], trace, searched=len(subsets))


def greedy_augment(pool: CandidatePool, objective: Callable, workers: int = 1,
                   start: Sequence[int] = ()) -> SearchResult:
    """Add the increment with the best augmented objective while any still fits."""
    obj = _Objective(objective, pool)
    chosen = list(start)
    trace = [(0, len(chosen), obj(chosen))]
    it = 0
    while True:
        if pool.max_size is not None and len(chosen) >= pool.max_size:
            break
        cands = [i for i in range(len(pool)) if i not in chosen and pool.fits(chosen + [i])]
        if not cands:
            break
        values = parallel_map(lambda i: obj(chosen + [i]), cands, workers)
        best_i, best_v = cands[0], values[0]
        for i, v in zip(cands[1:], values[1:]):
            if _better(v, best_v):
                best_i, best_v = i, v
        chosen.append(best_i)
        it += 1
        trace.append((it, len(chosen), best_v))
    if not pool.feasible(chosen):
        raise Infeasible("greedy augmentation could not reach a feasible plan")
    return _result(obj, chosen, trace)


def exchange_improve(initial: SearchResult, pool: CandidatePool, objective: Callable,
                     tol: float = EXCHANGE_TOL, best_improvement: bool = False, workers: int = 1,
                     max_sweeps: int = 1000) -> SearchResult:
    """Swap selected increments for unselected ones while that helps.

    Selected increments are visited in index order; each is replaced by the
    first (or, with ``best_improvement``, the best) unselected increment
    that keeps the plan feasible and raises the objective by more than
    ``tol``.  Stops after a sweep without changes.
    """
    obj = _Objective(objective, pool)
    current = list(initial.indices)
    value = obj(current)
    trace = [(0, len(current), value)]
    it = 0
    for _ in range(max_sweeps):
        changed = False
        for s in sorted(current):
            if s not in current:
                continue
            rest = [i for i in current if i != s]
            cands = [u for u in range(len(pool)) if u not in current and pool.feasible(rest + [u])]
            if best_improvement:
                values = parallel_map(lambda u: obj(rest + [u]), cands, workers)
                pick = None
                for u, v in zip(cands, values):
                    if _better(v, value, tol) and (pick is None or _better(v, pick[1])):
                        pick = (u, v)
            else:
                pick = None
                for u in cands:
                    v = obj(rest + [u])
                    if _better(v, value, tol):
                        pick = (u, v)
                        break
            if pick is not None:
                current = sorted(rest + [pick[0]])
                value = pick[1]
                changed = True
                it += 1
                trace.append((it, len(current), value))
        if not changed:
            break
    return _result(obj, current, trace, start=initial.indices)


def greedy_exchange(pool: CandidatePool, objective: Callable, workers: int = 1, **kw) -> SearchResult:
    g = greedy_augment(pool, objective, workers)
    return exchange_improve(g, pool, objective, workers=workers, **kw)


def binary_search_sample_size(objective: Callable[[int], object], target: float, n_max: int) -> tuple[int, dict]:
    """Smallest ``n <= n_max`` with ``objective(n) >= target``.

    ``objective`` must be non-decreasing and deterministic in ``n``.  Returns
    ``n`` and the evaluated values by ``n``.
    """
    seen: dict[int, float] = {}

    def f(n: int) -> float:
        if n not in seen:
            out = objective(n)
            seen[n] = _value(out)[0]
        return seen[n]

    if f(n_max) < target:
        raise Infeasible(f"target {target} not reached at n_max={n_max} (value {seen[n_max]})")
    if f(0) >= target:
        return 0, seen
    lo, hi = 0, n_max  # f(lo) < target <= f(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if f(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi, seen


def design_search_units(targets, covariates, candidates: Sequence[int] | None = None) -> list[int]:
    """Match each target point, in order, to its nearest still-unused unit.

    Euclidean distance; ties go to the smaller unit index.
    """
    X = np.asarray(covariates, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    T = np.asarray(targets, dtype=float)
    if T.ndim == 1:
        T = T[:, None] if X.shape[1] == 1 else T[None, :]
    if T.shape[1] != X.shape[1]:
        raise ValueError("targets and covariates differ in dimension")
    free = list(range(X.shape[0])) if candidates is None else sorted(int(c) for c in candidates)
    if T.shape[0] > len(free):
        raise PoolExhausted(f"{T.shape[0]} targets but only {len(free)} candidate units")
    chosen = []
    for t in T:
        d = np.sqrt(((X[free] - t) ** 2).sum(axis=1))
        k = int(np.argmin(d))  # first minimum = smallest index among ties
        chosen.append(free.pop(k))
    return chosen


def design_search_select(targets, covariates, frame: StudyFrame, variable: int = 0, time_index: int = 0,
                         candidates: Sequence[int] | None = None) -> MeasurementPlan:
    units = design_search_units(targets, covariates, candidates)
    return MeasurementPlan.for_units(frame, units, variable, time_index)


def two_point_targets(values, n: int) -> np.ndarray:
    """D-optimal targets for a straight-line fit on an interval: half at each end.

    With odd ``n`` the extra point goes to the lower end.
    """
    v = np.asarray(values, dtype=float).reshape(-1)
    lo_n = n - n // 2
    return np.concatenate([np.full(lo_n, v.min()), np.full(n // 2, v.max())])


def extreme_units(covariates, n: int) -> list[int]:
    """The ``n`` units farthest (Euclidean) from the coordinate-wise median."""
    X = np.asarray(covariates, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    d = np.sqrt(((X - np.median(X, axis=0)) ** 2).sum(axis=1))
    order = sorted(range(X.shape[0]), key=lambda i: (-d[i], i))
    return sorted(order[:n])
