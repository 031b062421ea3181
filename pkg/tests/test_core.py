from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odos.core import (
    MISSING,
    Dataset,
    Deterministic,
    Hierarchical,
    Hierarchy,
    MeasurementPlan,
    PerMeasurement,
    SimpleRandomSample,
    StudyFrame,
    SumCost,
    WeightedPlans,
    activated_clusters,
    design_support,
    deterministic_plan,
    null_design,
    plan_cardinality,
    plan_cost,
    read_dataset_csv,
    read_plan_csv,
    sample_plan,
    write_dataset_csv,
    write_plan_csv,
)
from odos.errors import MissingHierarchy, SupportTooLarge


# --------------------------------------------------------------------------
# Frames and hierarchies
# --------------------------------------------------------------------------


def test_frame_validation():
    StudyFrame(1, 1, (0.0,))
    with pytest.raises(ValueError):
        StudyFrame(0)
    with pytest.raises(ValueError):
        StudyFrame(2, 0)
    with pytest.raises(ValueError):
        StudyFrame(2, 1, (0.0, 0.0))
    with pytest.raises(ValueError):
        StudyFrame(2, 1, (1.0, 0.5))


def test_nested_hierarchy_membership():
    h = Hierarchy.nested((2, 3))
    assert h.n_units == 6
    assert h.n_levels == 2
    # level 1 clusters are the units themselves
    assert list(h.membership[:, 0]) == list(range(6))
    assert list(h.membership[:, 1]) == [0, 0, 0, 1, 1, 1]
    assert h.clusters_per_level == (6, 2)
    assert list(h.units_in(2, 1)) == [3, 4, 5]


def test_frame_rejects_mismatched_hierarchy():
    with pytest.raises(ValueError):
        StudyFrame(5, hierarchy=Hierarchy.nested((2, 3)))


def test_admissibility_mask():
    frame = StudyFrame(2, 1, (0.0, 1.0, 2.0), admissible={(0, 0): frozenset({0, 2})})
    MeasurementPlan(frame, [(0, 0, 2), (1, 0, 1)])
    with pytest.raises(ValueError):
        MeasurementPlan(frame, [(0, 0, 1)])


# --------------------------------------------------------------------------
# Plans and designs
# --------------------------------------------------------------------------


def test_plan_cardinality_examples():
    frame = StudyFrame(3, 2)
    assert plan_cardinality(MeasurementPlan.empty(frame)) == 0
    assert plan_cardinality(MeasurementPlan(frame, [(1, 1, 0), (2, 1, 0)])) == 2
    assert plan_cardinality(MeasurementPlan.full(frame)) == 6


def test_plan_bounds_and_duplicates():
    frame = StudyFrame(3)
    with pytest.raises(ValueError):
        MeasurementPlan(frame, [(3, 0, 0)])
    with pytest.raises(ValueError):
        MeasurementPlan(frame, [(0, 1, 0)])
    assert len(MeasurementPlan(frame, [(0, 0, 0), (0, 0, 0)])) == 1


@settings(max_examples=60, deadline=None)
@given(st.sets(st.integers(0, 11)), st.sets(st.integers(0, 11)))
def test_plan_set_algebra(a, b):
    frame = StudyFrame(12)
    A = MeasurementPlan.for_units(frame, a)
    B = MeasurementPlan.for_units(frame, b)
    assert len(A | B) + len(A & B) == len(A) + len(B)
    assert (A - B).isdisjoint(B)


def test_support_examples():
    frame = StudyFrame(3)
    p = MeasurementPlan.for_units(frame, [0])
    assert design_support(Deterministic(p)) == [(p, 1.0)]
    sup = design_support(SimpleRandomSample(frame, 2))
    assert len(sup) == 3 and all(w == pytest.approx(1 / 3) for _, w in sup)
    q = MeasurementPlan.for_units(frame, [1, 2])
    w = WeightedPlans(((p, 0.3), (q, 0.7)))
    assert design_support(w) == [(p, 0.3), (q, 0.7)]
    assert null_design(frame).plan == MeasurementPlan.empty(frame)


def test_weighted_plans_validation():
    frame = StudyFrame(2)
    p = MeasurementPlan.for_units(frame, [0])
    with pytest.raises(ValueError):
        WeightedPlans(((p, 0.5),))
    with pytest.raises(ValueError):
        WeightedPlans(((p, 1.0), (p, 0.0)))
    with pytest.raises(ValueError):
        SimpleRandomSample(frame, 3)


def test_support_limit():
    with pytest.raises(SupportTooLarge):
        design_support(SimpleRandomSample(StudyFrame(40), 20), limit=1000)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 7).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))))
def test_support_probabilities_sum_to_one(nk):
    n, k = nk
    sup = design_support(SimpleRandomSample(StudyFrame(n), k))
    assert abs(math.fsum(w for _, w in sup) - 1.0) <= 1e-12
    assert len({p for p, _ in sup}) == math.comb(n, k)


def test_sample_plan_frequencies():
    frame = StudyFrame(4)
    design = SimpleRandomSample(frame, 1)
    rng = np.random.default_rng(0)
    counts = np.zeros(4)
    n = 100_000
    for _ in range(n):
        counts[sample_plan(design, rng).units[0]] += 1
    freq = counts / n
    assert np.all(np.abs(freq - 0.25) <= 0.01)
    # four multinomial standard errors
    assert np.all(np.abs(freq - 0.25) <= 4 * math.sqrt(0.25 * 0.75 / n))


def test_sample_plan_weighted_frequencies():
    frame = StudyFrame(3)
    plans = [MeasurementPlan.for_units(frame, [i]) for i in range(3)]
    probs = [0.2, 0.3, 0.5]
    design = WeightedPlans(tuple(zip(plans, probs)))
    rng = np.random.default_rng(1)
    n = 100_000
    counts = {p: 0 for p in plans}
    for _ in range(n):
        counts[sample_plan(design, rng)] += 1
    for p, w in zip(plans, probs):
        assert abs(counts[p] / n - w) <= 4 * math.sqrt(w * (1 - w) / n)


def test_sample_plan_trivial_cases():
    frame = StudyFrame(3)
    rng = np.random.default_rng(0)
    p = MeasurementPlan.for_units(frame, [1])
    assert sample_plan(Deterministic(p), rng) == p
    assert sample_plan(SimpleRandomSample(frame, 3), rng) == MeasurementPlan.full(frame)


# --------------------------------------------------------------------------
# Datasets
# --------------------------------------------------------------------------


def test_dataset_missing_and_lookup():
    frame = StudyFrame(3)
    d = Dataset.from_mapping(frame, {(0, 0, 0): 1.5, (1, 0, 0): None, (2, 0, 0): MISSING})
    assert d.n_observed == 1
    assert d[(0, 0, 0)] == 1.5
    assert d[(1, 0, 0)] is MISSING
    assert d[(2, 0, 0)] is MISSING
    assert d.explicit_missing == {(1, 0, 0), (2, 0, 0)}


def test_dataset_rejects_bad_input():
    frame = StudyFrame(2)
    with pytest.raises(ValueError):
        Dataset(frame, [(0, 0, 0), (0, 0, 0)], [1.0, 2.0])
    with pytest.raises(ValueError):
        Dataset(frame, [(2, 0, 0)], [1.0])
    with pytest.raises(ValueError):
        Dataset(frame, [(0, 0, 0)], [1.0, 2.0])


def test_dataset_merge_and_subset():
    frame = StudyFrame(3)
    a = Dataset.from_mapping(frame, {(0, 0, 0): 1.0})
    b = Dataset.from_mapping(frame, {(2, 0, 0): 3.0})
    m = a.merge(b)
    assert m.observed_keys == {(0, 0, 0), (2, 0, 0)}
    assert m.subset_units([2]).observed_keys == {(2, 0, 0)}
    with pytest.raises(ValueError):
        m.merge(a)


def test_dataset_csv_round_trip(tmp_path):
    frame = StudyFrame(3, 2, (0.0, 1.0))
    d = Dataset.from_mapping(frame, {(0, 0, 0): 0.1, (2, 1, 1): -3.25, (1, 0, 1): None})
    text = write_dataset_csv(d, tmp_path / "d.csv")
    back = read_dataset_csv(tmp_path / "d.csv", frame)
    assert back == d
    assert back.explicit_missing == {(1, 0, 1)}
    assert "NA" in text
    with pytest.raises(ValueError):
        read_dataset_csv("a,b,c,d\n1,0,0,1\n", frame)


def test_plan_csv_round_trip():
    frame = StudyFrame(4)
    p = MeasurementPlan.for_units(frame, [0, 3])
    assert read_plan_csv(write_plan_csv(p), frame) == p


# --------------------------------------------------------------------------
# Costs
# --------------------------------------------------------------------------


def test_cost_examples():
    h = Hierarchy.nested((2, 5))
    frame = StudyFrame(10, hierarchy=h)
    cost = Hierarchical((1.0, 10.0))
    assert plan_cost(MeasurementPlan.empty(frame), cost) == 0.0
    assert plan_cost(MeasurementPlan.empty(frame), PerMeasurement(3.0)) == 0.0
    same = MeasurementPlan.for_units(frame, [0, 1])
    apart = MeasurementPlan.for_units(frame, [0, 5])
    assert activated_clusters(same, h) == (2, 1)
    assert plan_cost(same, cost) == 12.0
    assert plan_cost(apart, cost) == 22.0
    five = MeasurementPlan.for_units(frame, range(5))
    assert plan_cost(five, PerMeasurement(2.0)) == 10.0
    assert plan_cost(same, SumCost((PerMeasurement(0.5), cost))) == 13.0


def test_hierarchical_cost_needs_hierarchy():
    with pytest.raises(MissingHierarchy):
        plan_cost(MeasurementPlan.for_units(StudyFrame(3), [0]), Hierarchical((1.0,)))
    with pytest.raises(ValueError):
        PerMeasurement(-1.0)


def test_single_level_hierarchy_matches_per_measurement():
    frame = StudyFrame(6, hierarchy=Hierarchy.nested((6,)))
    for units in ([], [0], [1, 4], range(6)):
        p = MeasurementPlan.for_units(frame, units)
        assert plan_cost(p, Hierarchical((2.5,))) == plan_cost(p, PerMeasurement(2.5))


@settings(max_examples=60, deadline=None)
@given(st.sets(st.integers(0, 11)), st.integers(0, 11))
def test_cost_is_monotone(units, extra):
    frame = StudyFrame(12, hierarchy=Hierarchy.nested((2, 2, 3)))
    a = MeasurementPlan.for_units(frame, units)
    b = a | MeasurementPlan.for_units(frame, [extra])
    for cost in (PerMeasurement(1.5), Hierarchical((1.0, 4.0, 9.0)),
                 SumCost((PerMeasurement(1.0), Hierarchical((0.0, 2.0, 3.0))))):
        assert plan_cost(b, cost) >= plan_cost(a, cost)


def test_deterministic_plan_of_degenerate_designs():
    frame = StudyFrame(3)
    full = MeasurementPlan.full(frame)
    assert deterministic_plan(SimpleRandomSample(frame, 3)) == full
    assert deterministic_plan(WeightedPlans(((full, 1.0),))) == full
    assert deterministic_plan(Deterministic(full)) == full
    with pytest.raises(ValueError):
        deterministic_plan(SimpleRandomSample(frame, 2))
