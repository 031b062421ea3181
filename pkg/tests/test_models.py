from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odos import testkit as tk
from odos.core import Dataset, Hierarchy, MeasurementPlan, StudyFrame
from odos.errors import DegenerateChain, DegenerateChainWarning, MissingHierarchy, NonFiniteValue
from odos.models import (
    GammaPrior,
    LinReg,
    NestedNormalMean,
    NormalMean,
    TwoStateCTMC,
    ctmc_transition_matrix,
    log_likelihood,
    simulate_data,
)


def test_prior_validation():
    with pytest.raises(ValueError):
        NormalMean(noise_variance=0.0)
    with pytest.raises(ValueError):
        GammaPrior(0.0, 1.0)
    with pytest.raises(ValueError):
        TwoStateCTMC(initial=(0.7, 0.7))
    with pytest.raises(ValueError):
        LinReg(1.0, np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]), np.ones((3, 2)))
    with pytest.raises(ValueError):
        LinReg(1.0, np.zeros(2), np.eye(2), np.ones((3, 3)))


def test_prior_sampling_moments():
    rng = np.random.default_rng(0)
    assert NormalMean(1.0, 2.5, 0.0).sample_prior(rng) == 2.5
    x = NormalMean(1.0, 0.0, 1.0).sample_prior(rng, 100_000)[:, 0]
    assert abs(x.mean()) <= 0.013 and abs(x.var() - 1.0) <= 0.02
    lam = TwoStateCTMC().sample_prior(rng, 100_000)[:, 0]
    assert abs(lam.mean() - 1.0) <= 0.01


def test_simulate_respects_plan():
    rng = np.random.default_rng(1)
    frame = StudyFrame(5, 2, (0.0, 1.0))
    plan = MeasurementPlan(frame, [(0, 0, 0), (1, 0, 1), (2, 1, 0), (3, 0, 0), (4, 1, 1), (4, 0, 0), (0, 1, 1)])
    d = simulate_data(NormalMean(), [0.0], plan, rng)
    assert d.n_observed == 7 and d.observed_keys == plan.entries
    assert simulate_data(NormalMean(), [0.0], MeasurementPlan.empty(frame), rng).n_observed == 0


def test_ctmc_without_exits_stays_put():
    frame = StudyFrame(4, time_grid=(0.0, 1.0, 5.0))
    model = TwoStateCTMC(initial=(1.0, 0.0))
    d = simulate_data(model, [0.0, 3.0], MeasurementPlan.full(frame), np.random.default_rng(2))
    assert np.all(d.values == 1.0)


def test_log_likelihood_examples():
    frame = StudyFrame(1)
    assert log_likelihood(NormalMean(), [0.0], Dataset.empty(frame)) == 0.0
    d = Dataset.from_mapping(frame, {(0, 0, 0): 0.0})
    assert log_likelihood(NormalMean(), [0.0], d) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)

    frame = StudyFrame(1, time_grid=(0.0, 0.7))
    d = Dataset.from_mapping(frame, {(0, 0, 0): 1, (0, 0, 1): 1})
    model = TwoStateCTMC(initial=(1.0, 0.0))
    assert log_likelihood(model, [1.0, 1.0], d) == pytest.approx(math.log(0.5 + 0.5 * math.exp(-1.4)), abs=1e-12)


def test_log_likelihood_rejects_bad_values():
    frame = StudyFrame(1)
    with pytest.raises(NonFiniteValue):
        log_likelihood(NormalMean(), [0.0], Dataset.from_mapping(frame, {(0, 0, 0): math.inf}))
    with pytest.raises(ValueError):
        log_likelihood(TwoStateCTMC(), [1.0, 1.0], Dataset.from_mapping(frame, {(0, 0, 0): 3}))


def test_transition_matrix_examples():
    assert np.array_equal(ctmc_transition_matrix(1.0, 1.0, 0.0), np.eye(2))
    assert np.allclose(ctmc_transition_matrix(1.0, 1.0, 50.0), 0.5, atol=1e-12, rtol=0)
    P = ctmc_transition_matrix(1.0, 2.0, math.log(2) / 3)
    assert P[0, 1] == pytest.approx(1 / 6, abs=1e-14)
    with pytest.raises(ValueError):
        ctmc_transition_matrix(-1.0, 1.0, 1.0)
    with pytest.raises(DegenerateChain):
        ctmc_transition_matrix(0.0, 0.0, 1.0, strict=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert np.array_equal(ctmc_transition_matrix(0.0, 0.0, 1.0), np.eye(2))
    assert any(issubclass(w.category, DegenerateChainWarning) for w in caught)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0), st.floats(0.0, 4.0), st.floats(0.0, 4.0))
def test_chapman_kolmogorov_and_rows(lam, mu, d1, d2):
    if lam + mu == 0:
        return
    P = ctmc_transition_matrix(lam, mu, d1 + d2)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12, rtol=0)
    Q = ctmc_transition_matrix(lam, mu, d1) @ ctmc_transition_matrix(lam, mu, d2)
    assert np.abs(P - Q).max() <= 1e-10


def test_transition_matrix_matches_expm():
    for lam, mu, dt in [(0.3, 1.7, 0.4), (2.0, 0.1, 3.0), (1e-3, 4.0, 0.01)]:
        assert np.allclose(ctmc_transition_matrix(lam, mu, dt), tk.transition_expm(lam, mu, dt), atol=1e-12)


def _partition_check(model, frame, theta, rng):
    plan = MeasurementPlan.full(frame)
    data = simulate_data(model, theta, plan, rng)
    total = log_likelihood(model, theta, data)
    parts = sum(log_likelihood(model, theta, data.subset_units([u])) for u in range(frame.n_units))
    assert total == pytest.approx(parts, abs=1e-10)


def test_log_likelihood_additive_over_units():
    rng = np.random.default_rng(3)
    _partition_check(NormalMean(), StudyFrame(5), np.array([0.3]), rng)
    W = rng.normal(size=(5, 2))
    _partition_check(LinReg(0.5, np.zeros(2), np.eye(2), W), StudyFrame(5), np.array([1.0, -1.0]), rng)
    _partition_check(TwoStateCTMC(), StudyFrame(4, time_grid=(0.0, 0.5, 2.0)), np.array([0.8, 1.2]), rng)
    # independent units: a nested model with no random effects
    _partition_check(NestedNormalMean(2.0), StudyFrame(5), np.array([0.1]), rng)


def test_nested_model_needs_hierarchy():
    model = NestedNormalMean(1.0, 0.0, 1.0, (0.5,))
    frame = StudyFrame(4)
    with pytest.raises(MissingHierarchy):
        simulate_data(model, [0.0], MeasurementPlan.full(frame), np.random.default_rng(0))
    frame = StudyFrame(4, hierarchy=Hierarchy.nested((2, 2)))
    V = model.marginal_cov(frame, np.arange(4))
    assert V[0, 1] == 0.5 and V[0, 2] == 0.0 and V[0, 0] == 1.5


@pytest.mark.parametrize("name", ["normal", "linreg", "nested", "ctmc"])
def test_evidence_matches_independent_implementation(name):
    rng = np.random.default_rng(4)
    if name == "normal":
        model, frame = NormalMean(1.0, 0.0, 1.0), StudyFrame(3)
    elif name == "linreg":
        model, frame = LinReg(1.0, np.zeros(2), np.eye(2), np.array([[1, 0.5], [1, -1.0], [1, 2.0]])), StudyFrame(3)
    elif name == "nested":
        model = NestedNormalMean(1.0, 0.0, 1.0, (0.5,))
        frame = StudyFrame(4, hierarchy=Hierarchy.nested((2, 2)))
    else:
        model, frame = TwoStateCTMC(), StudyFrame(2, time_grid=(0.0, 0.5, 1.0))
    data = simulate_data(model, model.sample_prior(rng), MeasurementPlan.full(frame), rng)
    draws = model.sample_prior(np.random.default_rng(5), 10_000)
    lik = np.exp(model.log_likelihood_many(draws, data))
    ours, ours_se = lik.mean(), lik.std(ddof=1) / 100
    ref, ref_se = tk.evidence_oracle(model, data, 10_000, seed=6)
    assert abs(ours - ref) <= 3 * math.hypot(ours_se, ref_se)
    theta = draws[0]
    assert log_likelihood(model, theta, data) == pytest.approx(tk.naive_log_likelihood(model, theta, data), abs=1e-9)
