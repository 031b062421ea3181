from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odos.errors import DimensionMismatch, SingularMatrix
from odos.inference import ExactNormal, Particles
from odos.utility import (
    DecisionQuadratic,
    DecisionTable,
    Expression,
    FiniteDecisions,
    NegPosteriorVariance,
    a_optimality_utility,
    d_optimality_utility,
    neg_posterior_variance,
    optimal_decision,
    point_mass,
    posterior_utility,
    target_vector,
)


def test_expression_evaluation():
    th = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.allclose(Expression("theta[0] + 2*theta[1]").on_theta(th), [5.0, 11.0])
    assert np.allclose(Expression("lam*mu - beta[1]").on_theta(th), [0.0, 8.0])
    assert np.allclose(Expression("0.5").on_theta(th), [0.5, 0.5])
    assert np.allclose(Expression("max(theta, 0) + exp(0)").on_theta(np.array([[-1.0], [2.0]])), [1.0, 3.0])
    assert np.allclose(Expression("1 - exp(-v)").on_values(np.array([0.0, 1.0])), [0.0, 1 - math.exp(-1)])


@pytest.mark.parametrize("text", ["__import__('os')", "theta.real", "open", "theta[i]", "lambda: 1", "'a'",
                                  "x + 1", "theta < 1", "exp(x=1)"])
def test_expression_rejects_unsafe_input(text):
    with pytest.raises(ValueError):
        Expression(text)


def test_expression_dimension_checks():
    with pytest.raises(DimensionMismatch):
        Expression("theta[2]").on_theta(np.zeros((1, 2)))
    with pytest.raises(DimensionMismatch):
        Expression("theta").on_theta(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        Expression("v").on_theta(np.zeros((1, 1)))


def test_target_vector():
    assert list(target_vector(1, 3)) == [0, 1, 0]
    assert list(target_vector([1, 1], 2)) == [1, 1]
    with pytest.raises(DimensionMismatch):
        target_vector(2, 2)
    with pytest.raises(DimensionMismatch):
        target_vector([1, 1, 1], 2)


def test_finite_decisions_validation():
    with pytest.raises(ValueError):
        FiniteDecisions((), ())
    with pytest.raises(ValueError):
        FiniteDecisions(("a", "a"), ("0", "1"))


def test_information_utilities():
    I = np.eye(2)
    assert d_optimality_utility(I, I) == pytest.approx(2 * math.log(2), abs=1e-12)
    obs = np.array([[2.0, 0.5], [0.5, 1.0]])
    assert d_optimality_utility(np.zeros((2, 2)), obs) == pytest.approx(math.log(np.linalg.det(obs)), abs=1e-12)
    assert d_optimality_utility(np.zeros((2, 2)), np.zeros((2, 2))) == -math.inf
    assert a_optimality_utility(I, I) == pytest.approx(-1.0)
    assert a_optimality_utility(I, np.zeros((2, 2))) == pytest.approx(-2.0)
    with pytest.raises(SingularMatrix):
        a_optimality_utility(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(DimensionMismatch):
        d_optimality_utility(np.eye(2), np.eye(3))


def _random_psd(rng, d, rank=None):
    A = rng.normal(size=(d, rank or d))
    return A @ A.T


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_d_optimality_monotone(seed, d):
    rng = np.random.default_rng(seed)
    base = _random_psd(rng, d) + 1e-3 * np.eye(d)
    inc = _random_psd(rng, d, rank=1)
    assert d_optimality_utility(base + inc, np.zeros((d, d))) >= d_optimality_utility(base, np.zeros((d, d)))
    pd = _random_psd(rng, d) + 1e-2 * np.eye(d)
    assert d_optimality_utility(base, pd) > d_optimality_utility(base, np.zeros((d, d)))


def test_posterior_variance_examples():
    assert neg_posterior_variance(point_mass([3.0])) == 0.0
    assert neg_posterior_variance(ExactNormal([0.0], [[0.5]])) == -0.5
    S = np.array([[1.0, 0.3], [0.3, 2.0]])
    assert neg_posterior_variance(ExactNormal([0.0, 0.0], S), [1, 1]) == pytest.approx(-(1.0 + 0.6 + 2.0))


def test_optimal_decision_examples():
    assert optimal_decision(point_mass([3.0]), DecisionQuadratic()) == (3.0, 0.0)
    d, v = optimal_decision(ExactNormal([1.0], [[0.5]]), DecisionQuadratic())
    assert d == 1.0 and v == -0.5
    table = DecisionTable(FiniteDecisions(("stop", "go"), ("0", "theta")))
    d, v = optimal_decision(ExactNormal([-0.2], [[1.0]]), table)
    assert d == "stop" and v == 0.0


def test_optimal_decision_tie_breaks_lexicographically():
    table = DecisionTable(FiniteDecisions(("zeta", "alpha", "mid"), ("1", "1", "0")))
    assert optimal_decision(point_mass([0.0]), table)[0] == "alpha"


def _brute_force_table(post, labels, exprs):
    """Plain loop over decisions, averaging each value over explicit nodes."""
    if isinstance(post, ExactNormal):
        x, w = np.polynomial.hermite_e.hermegauss(64)
        pts = post.mean[0] + math.sqrt(post.cov[0, 0]) * x
        w = w / w.sum()
    else:
        pts, w = post.draws[:, 0], post.weights
    best = None
    for label in sorted(labels):
        fn = exprs[label]
        val = sum(wi * fn(p) for p, wi in zip(pts, w))
        if best is None or val > best[1]:
            best = (label, val)
    return best


def test_table_decision_matches_brute_force():
    rng = np.random.default_rng(0)
    for i in range(20):
        a, b, c = (float(x) for x in rng.normal(size=3))
        exprs = {"one": lambda t, a=a: a * t, "two": lambda t, b=b: b * t * t, "three": lambda t, c=c: c + 0 * t}
        table = DecisionTable(FiniteDecisions(("one", "two", "three"), (f"{a!r}*theta", f"{b!r}*theta*theta",
                                                                            f"{c!r}")))
        if i % 2:
            post = ExactNormal([rng.normal()], [[rng.uniform(0.1, 2.0)]])
        else:
            post = Particles(rng.normal(size=(50, 1)), rng.dirichlet(np.ones(50)))
        label, value = optimal_decision(post, table)
        ref_label, ref_value = _brute_force_table(post, ["one", "two", "three"], exprs)
        assert label == ref_label and value == pytest.approx(ref_value, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(0.1, 5))
def test_affine_transform_keeps_argmax(seed, shift, scale):
    rng = np.random.default_rng(seed)
    coefs = rng.normal(size=(3, 2)).tolist()
    texts = [f"{p!r} + {q!r}*theta" for p, q in coefs]
    moved = [f"{shift!r} + {scale!r}*({t})" for t in texts]
    post = ExactNormal([rng.normal()], [[rng.uniform(0.1, 2.0)]])
    d1, v1 = optimal_decision(post, DecisionTable(FiniteDecisions(("a", "b", "c"), texts)))
    d2, v2 = optimal_decision(post, DecisionTable(FiniteDecisions(("a", "b", "c"), moved)))
    assert d1 == d2
    assert v2 == pytest.approx(shift + scale * v1, abs=1e-9)


def test_quadratic_value_equals_negative_variance():
    S = np.array([[1.0, 0.2], [0.2, 0.5]])
    post = ExactNormal([0.0, 1.0], S)
    assert posterior_utility(post, DecisionQuadratic([1, 2])) == neg_posterior_variance(post, [1, 2])
    rng = np.random.default_rng(1)
    part = Particles(rng.normal(size=(200, 2)), rng.dirichlet(np.ones(200)))
    assert posterior_utility(part, DecisionQuadratic(1)) == pytest.approx(
        posterior_utility(part, NegPosteriorVariance(1)), abs=1e-12)
