from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odos import testkit as tk
from odos.core import MeasurementPlan, PerMeasurement, StudyFrame
from odos.errors import Infeasible, PoolExhausted, SpaceTooLarge
from odos.expected_utility import expected_utility_plan
from odos.models import LinReg, NormalMean
from odos.search import (
    CandidatePool,
    binary_search_sample_size,
    design_search_units,
    exchange_improve,
    exhaustive_best,
    extreme_units,
    greedy_augment,
    greedy_exchange,
    two_point_targets,
)
from odos.utility import DOptimality, NegPosteriorVariance


def _line_model(x):
    x = np.asarray(x, dtype=float)
    return LinReg(1.0, np.zeros(2), np.eye(2) * 100.0, np.column_stack([np.ones_like(x), x]))


def _dopt(model):
    return lambda plan: expected_utility_plan(plan, model, DOptimality())


def test_pool_validation():
    frame = StudyFrame(3)
    with pytest.raises(ValueError):
        CandidatePool((), max_size=1)
    with pytest.raises(ValueError):
        CandidatePool.units(frame)
    with pytest.raises(ValueError):
        CandidatePool.units(frame, max_cost=1.0)
    with pytest.raises(ValueError):
        CandidatePool((MeasurementPlan.for_units(frame, [0]), MeasurementPlan.for_units(frame, [0, 1])), max_size=1)


def test_single_candidate_pool():
    frame = StudyFrame(1)
    pool = CandidatePool.units(frame, max_size=1)
    res = greedy_exchange(pool, lambda p: float(len(p)))
    assert res.indices == (0,)


def test_line_fit_prefers_endpoints():
    model = _line_model([-1.0, 0.0, 1.0])
    pool = CandidatePool.units(StudyFrame(3), max_size=2)
    for res in (exhaustive_best(pool, _dopt(model)), greedy_exchange(pool, _dopt(model))):
        assert res.indices == (0, 2)


def test_zero_budget_gives_empty_plan():
    pool = CandidatePool.units(StudyFrame(4), max_size=0)
    res = greedy_augment(pool, lambda p: -1.0 / (1 + len(p)))
    assert res.indices == () and len(res.plan) == 0
    assert exhaustive_best(pool, lambda p: 0.0).indices == ()


def test_exchangeable_units_pick_lowest_indices():
    model = NormalMean()
    pool = CandidatePool.units(StudyFrame(6), max_size=3)
    res = greedy_exchange(pool, lambda p: expected_utility_plan(p, model, NegPosteriorVariance()))
    assert res.indices == (0, 1, 2)
    assert res.utility == pytest.approx(-0.25)


def test_greedy_versus_exhaustive():
    model = _line_model([0.0, 0.3, 0.5, 0.6, 1.5, 2.0])
    pool = CandidatePool.units(StudyFrame(6), max_size=3)
    ex = exhaustive_best(pool, _dopt(model))
    ge = greedy_exchange(pool, _dopt(model))
    g = greedy_augment(pool, _dopt(model))
    assert ge.utility <= ex.utility + 1e-9
    assert ge.utility >= g.utility
    ref = tk.enumerate_oracle(pool.increments, 3, _dopt(model))
    assert ex.indices == ref[0] and ex.utility == pytest.approx(ref[1], abs=1e-12)


def test_exchange_from_optimum_and_from_worst():
    model = _line_model([-1.0, 0.0, 1.0])
    pool = CandidatePool.units(StudyFrame(3), max_size=2)
    best = exhaustive_best(pool, _dopt(model))
    again = exchange_improve(best, pool, _dopt(model))
    assert again.indices == best.indices and len(again.trace) == 1
    worst = greedy_augment(pool, _dopt(model), start=[0, 1])
    moved = exchange_improve(worst, pool, _dopt(model))
    assert moved.indices == (0, 2)
    values = [v for _, _, v in moved.trace]
    assert values == sorted(values)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_exchange_trace_non_decreasing(seed):
    rng = np.random.default_rng(seed)
    W = np.column_stack([np.ones(7), rng.normal(size=7)])

    def logdet(plan):
        rows = [u for u, _, _ in plan.entries]
        return float(np.linalg.slogdet(W[rows].T @ W[rows] + 0.01 * np.eye(2))[1])

    pool = CandidatePool.units(StudyFrame(7), max_size=3)
    g = greedy_augment(pool, logdet)
    res = exchange_improve(g, pool, logdet)
    values = [v for _, _, v in res.trace]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert res.utility >= g.utility


def test_cost_budget():
    frame = StudyFrame(5)
    pool = CandidatePool.units(frame, max_cost=2.5, cost_model=PerMeasurement(1.0))
    res = greedy_augment(pool, lambda p: float(len(p)))
    assert len(res.indices) == 2
    ex = exhaustive_best(pool, lambda p: float(len(p)))
    assert ex.indices == (0, 1)


def test_exhaustive_limits():
    pool = CandidatePool.units(StudyFrame(30), max_size=15)
    with pytest.raises(SpaceTooLarge):
        exhaustive_best(pool, lambda p: 0.0)
    with pytest.raises(SpaceTooLarge):
        tk.enumerate_oracle(pool.increments, 15, lambda p: 0.0)


def test_binary_search_examples():
    f = lambda n: -1.0 / (1 + n)  # noqa: E731
    assert binary_search_sample_size(f, -0.25, 50)[0] == 3
    assert binary_search_sample_size(f, -1.0, 50)[0] == 0
    assert binary_search_sample_size(f, -2.0, 50)[0] == 0
    with pytest.raises(Infeasible):
        binary_search_sample_size(f, -0.001, 100)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99), st.integers(1, 200))
def test_binary_search_matches_linear_scan(target, n_max):
    f = lambda n: -1.0 / (1 + n)  # noqa: E731
    scan = next((n for n in range(n_max + 1) if f(n) >= -target), None)
    if scan is None:
        with pytest.raises(Infeasible):
            binary_search_sample_size(f, -target, n_max)
    else:
        assert binary_search_sample_size(f, -target, n_max)[0] == scan


def test_design_search_examples():
    assert design_search_units([0.0, 2.0], [0.1, 0.9, 1.9]) == [0, 2]
    assert design_search_units([1.0], [0.5, 1.5]) == [0]
    assert design_search_units([0.0, 0.0], [0.0, 5.0, 0.0]) == [0, 2]
    with pytest.raises(PoolExhausted):
        design_search_units([0.0, 1.0, 2.0], [0.0, 1.0])


def test_two_point_and_extreme_selection():
    assert list(two_point_targets([3.0, -1.0, 2.0], 3)) == [-1.0, -1.0, 3.0]
    assert extreme_units([-2.0, -1.0, 0.0, 1.0, 2.0], 2) == [0, 4]
    assert extreme_units([0.0, 0.0, 1.0], 1) == [2]
    assert len(extreme_units(np.arange(10.0), 10)) == 10


def test_exhaustive_tie_breaks_lexicographically():
    pool = CandidatePool.units(StudyFrame(4), max_size=2, exact_size=True)
    res = exhaustive_best(pool, lambda p: 1.0)
    assert res.indices == (0, 1)


def test_parallel_search_matches_serial():
    model = _line_model([0.0, 0.4, 0.9, 1.1, 2.0])
    pool = CandidatePool.units(StudyFrame(5), max_size=2)
    a = greedy_exchange(pool, _dopt(model), workers=1)
    b = greedy_exchange(pool, _dopt(model), workers=3)
    assert a.indices == b.indices and a.utility == b.utility and a.trace == b.trace
    assert math.isfinite(a.utility)
