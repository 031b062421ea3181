from __future__ import annotations

import math

import numpy as np
import pytest

from odos.core import (
    Dataset,
    Deterministic,
    MeasurementPlan,
    PerMeasurement,
    SimpleRandomSample,
    StudyFrame,
    WeightedPlans,
    null_design,
)
from odos.expected_utility import (
    MCConfig,
    UtilityEstimate,
    expected_cost,
    expected_utility_design,
    expected_utility_plan,
    frequentist_expected_utility,
    summarize,
)
from odos.models import LinReg, NormalMean, TwoStateCTMC, simulate_data
from odos.utility import (
    AOptimality,
    ConstantUtility,
    DecisionQuadratic,
    DecisionTable,
    DOptimality,
    FiniteDecisions,
    NegPosteriorVariance,
)

TABLE = DecisionTable(FiniteDecisions(("act", "hold"), ("theta - 0.2", "0")))


def test_config_and_estimate_validation():
    with pytest.raises(ValueError):
        MCConfig(outer_draws=0)
    with pytest.raises(ValueError):
        MCConfig(posterior_method="mcmc")
    with pytest.raises(ValueError):
        UtilityEstimate(0.0, -1.0, 1)


def test_summarize():
    assert summarize([1.0, 1.0, 1.0]) == UtilityEstimate(1.0, 0.0, 3)
    assert summarize([1.0, -math.inf]).mean == -math.inf
    est = summarize([0.0, 2.0])
    assert est.mean == 1.0 and est.std_error == pytest.approx(1.0)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 8])
def test_normal_mean_closed_form(n):
    frame = StudyFrame(8)
    est = expected_utility_plan(MeasurementPlan.for_units(frame, range(n)), NormalMean(), NegPosteriorVariance())
    assert est.mean == pytest.approx(-1 / (1 + n), abs=1e-12)
    assert est.std_error == 0.0


def test_constant_utility():
    frame = StudyFrame(3)
    est = expected_utility_plan(MeasurementPlan.for_units(frame, [0, 1]), NormalMean(), ConstantUtility(2.5))
    assert est.mean == 2.5 and est.std_error == 0.0


def test_linreg_quadratic_matches_closed_form():
    W = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 3.0], [1.0, -2.0]])
    B0 = np.array([[2.0, 0.2], [0.2, 1.0]])
    m = LinReg(0.5, np.zeros(2), B0, W)
    plan = MeasurementPlan.for_units(StudyFrame(4), [0, 2, 3])
    Ws = W[[0, 2, 3]]
    cov = np.linalg.inv(np.linalg.inv(B0) + Ws.T @ Ws / 0.5)
    est = expected_utility_plan(plan, m, DecisionQuadratic(1), cfg=MCConfig(outer_draws=50))
    assert est.mean == pytest.approx(-cov[1, 1], abs=1e-9)


def test_d_optimality_for_normal_mean():
    frame = StudyFrame(6)
    prior = Dataset.from_mapping(frame, {(5, 0, 0): 0.3})
    est = expected_utility_plan(MeasurementPlan.for_units(frame, range(4)), NormalMean(2.0), DOptimality(), prior)
    assert est.mean == pytest.approx(math.log(4 / 2.0 + 1 / 2.0), abs=1e-12) and est.std_error == 0.0
    est = expected_utility_plan(MeasurementPlan.empty(frame), NormalMean(2.0), DOptimality())
    assert est.mean == -math.inf
    est = expected_utility_plan(MeasurementPlan.for_units(frame, range(4)), NormalMean(2.0), AOptimality())
    assert est.mean == pytest.approx(-0.5)


def test_design_reductions():
    frame = StudyFrame(4)
    m = NormalMean()
    cfg = MCConfig(outer_draws=100, seed=4)
    p1 = MeasurementPlan.for_units(frame, [0])
    p2 = MeasurementPlan.for_units(frame, [1, 2, 3])
    det = expected_utility_design(Deterministic(p1), m, TABLE, cfg=cfg)
    assert det == expected_utility_plan(p1, m, TABLE, cfg=cfg)
    mix = expected_utility_design(WeightedPlans(((p1, 0.5), (p2, 0.5))), m, TABLE, cfg=cfg)
    a = expected_utility_plan(p1, m, TABLE, cfg=cfg).mean
    b = expected_utility_plan(p2, m, TABLE, cfg=cfg).mean
    assert mix.mean == pytest.approx((a + b) / 2, abs=1e-12)


def test_srs_matches_single_plan_by_symmetry():
    frame = StudyFrame(4)
    m = NormalMean()
    srs = expected_utility_design(SimpleRandomSample(frame, 2), m, TABLE, cfg=MCConfig(outer_draws=400, seed=1))
    one = expected_utility_plan(MeasurementPlan.for_units(frame, [0, 3]), m, TABLE,
                                cfg=MCConfig(outer_draws=400, seed=2))
    assert abs(srs.mean - one.mean) <= 3 * math.hypot(srs.std_error, one.std_error)


def test_expected_cost():
    frame = StudyFrame(5)
    c1 = PerMeasurement(1.0)
    assert expected_cost(null_design(frame), c1).mean == 0.0
    assert expected_cost(Deterministic(MeasurementPlan.full(frame)), PerMeasurement(2.0)).mean == 10.0
    est = expected_cost(SimpleRandomSample(StudyFrame(3), 2), c1)
    assert est.mean == 2.0 and est.std_error == 0.0
    sampled = expected_cost(SimpleRandomSample(StudyFrame(30), 3), c1, cfg=MCConfig(support_limit=10))
    assert sampled.mean == 3.0


def test_monotone_in_nested_plans():
    frame = StudyFrame(10)
    m = NormalMean(1.5, 0.0, 0.7)
    prev = -math.inf
    for n in range(11):
        cur = expected_utility_plan(MeasurementPlan.for_units(frame, range(n)), m, NegPosteriorVariance()).mean
        assert cur >= prev
        prev = cur


def test_standard_error_shrinks_with_draws():
    frame = StudyFrame(3)
    plan = MeasurementPlan.for_units(frame, [0, 1])
    ratios = []
    for seed in range(10):
        small = expected_utility_plan(plan, NormalMean(), TABLE, cfg=MCConfig(outer_draws=200, seed=seed))
        large = expected_utility_plan(plan, NormalMean(), TABLE, cfg=MCConfig(outer_draws=800, seed=seed))
        ratios.append(large.std_error / small.std_error)
    assert 0.35 <= np.mean(ratios) <= 0.65


def test_bit_identical_across_worker_counts():
    frame = StudyFrame(2, time_grid=(0.0, 0.5, 1.5))
    model = TwoStateCTMC()
    plan = MeasurementPlan.full(frame)
    prior = simulate_data(model, [1.0, 1.0], MeasurementPlan.for_units(frame, [0], time_index=0),
                          np.random.default_rng(0))
    plan = MeasurementPlan(frame, [(0, 0, 1), (0, 0, 2), (1, 0, 0), (1, 0, 2)])
    outs = []
    for w in (1, 3):
        cfg = MCConfig(outer_draws=30, seed=99, posterior_method="importance", n_particles=500, workers=w)
        outs.append((expected_utility_plan(plan, model, NegPosteriorVariance(1), prior, cfg),
                     expected_utility_plan(plan, model, DOptimality(), prior, cfg),
                     expected_utility_design(SimpleRandomSample(StudyFrame(5), 2), NormalMean(), TABLE,
                                             cfg=MCConfig(outer_draws=5, plan_samples=40, workers=w),
                                             force_sampling=True)))
    assert outs[0] == outs[1]


def test_ctmc_expected_posterior_variance_below_prior():
    frame = StudyFrame(4, time_grid=(0.0, 0.5, 1.0))
    model = TwoStateCTMC()
    cfg = MCConfig(outer_draws=40, seed=3, n_particles=1000)
    est = expected_utility_plan(MeasurementPlan.full(frame), model, NegPosteriorVariance(0), cfg=cfg)
    prior_var = model.lambda_prior.variance
    assert -est.mean < prior_var
    assert est.std_error > 0


def test_frequentist_variant():
    frame = StudyFrame(6)
    prior = Dataset.from_mapping(frame, {(5, 0, 0): 0.3, (4, 0, 0): -0.1})
    plan = MeasurementPlan.for_units(frame, range(3))
    est = frequentist_expected_utility(plan, NormalMean(2.0), DOptimality(), prior, [0.1])
    assert est.mean == pytest.approx(math.log(3 / 2 + 2 / 2), abs=1e-12) and est.std_error == 0.0
    est = frequentist_expected_utility(plan, NormalMean(), ConstantUtility(1.25), prior, [0.0])
    assert est.mean == 1.25

    W = np.column_stack([np.ones(6), np.arange(6.0)])
    diffuse = LinReg(1.0, np.zeros(2), np.eye(2) * 1e8, W)
    plan = MeasurementPlan.for_units(frame, [0, 2, 5])
    freq = frequentist_expected_utility(plan, diffuse, NegPosteriorVariance(1), None, [0.5, 1.0],
                                        MCConfig(outer_draws=20))
    bayes = expected_utility_plan(plan, diffuse, NegPosteriorVariance(1), cfg=MCConfig(outer_draws=20))
    assert abs(freq.mean - bayes.mean) <= 3 * math.hypot(freq.std_error, bayes.std_error) + 1e-8

    tab = frequentist_expected_utility(plan, diffuse, DecisionTable(FiniteDecisions(("a", "b"), ("beta[1]", "0"))),
                                       None, [0.5, 1.0], MCConfig(outer_draws=50, seed=2))
    assert tab.mean == pytest.approx(1.0, abs=4 * tab.std_error + 1e-9)
