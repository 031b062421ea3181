"""Value of information: linear difference, indifference price, eligibility."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .core import Dataset, Design, MeasurementPlan, deterministic_plan, is_deterministic, plan_cost
from .expected_utility import (
    MCConfig,
    UtilityEstimate,
    current_posterior,
    expected_utility_design,
    expected_utility_plan,
    outer_posteriors,
)
from .models import ModelSpec
from .utility import (
    DecisionQuadratic,
    Expression,
    is_decision_utility,
    optimal_decision,
    target_vector,
)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class VoiWarning(UserWarning):
    """Estimated value of information came out negative and was clamped."""


@dataclass(frozen=True)
class VoiResult:
    value: float
    baseline: float
    method: str
    std_error: float
    expected_value: float = math.nan
    clamped: bool = False

    def to_json(self) -> dict:
        return asdict(self)


def _require_decision(utility) -> None:
    if not is_decision_utility(utility):
        raise TypeError("value of information needs a decision utility (quadratic or table)")


def _current(model, frame, prior_data, cfg):
    return current_posterior(model, prior_data if prior_data is not None else Dataset.empty(frame), cfg)


def _clamp(value: float, baseline: float, method: str, se: float, expected: float) -> VoiResult:
    if value < 0:
        warnings.warn(f"negative value of information {value:.3g} clamped to 0", VoiWarning, stacklevel=3)
        return VoiResult(0.0, baseline, method, se, expected, True)
    return VoiResult(value, baseline, method, se, expected, False)


def voi_linear(plan, model: ModelSpec, utility, prior_data: Dataset | None = None,
               cfg: MCConfig | None = None) -> VoiResult:
    """Expected value with the new data minus the value of deciding now.

    ``plan`` may also be a design; the result is then the support-weighted
    average of the per-plan values.
    """
    _require_decision(utility)
    cfg = cfg or MCConfig()
    if not isinstance(plan, MeasurementPlan):
        return _voi_linear_design(plan, model, utility, prior_data, cfg)
    baseline = optimal_decision(_current(model, plan.frame, prior_data, cfg), utility)[1]
    if len(plan) == 0:
        return VoiResult(0.0, baseline, "linear", 0.0, baseline)
    est = expected_utility_plan(plan, model, utility, prior_data, cfg)
    return _clamp(est.mean - baseline, baseline, "linear", est.std_error, est.mean)


def _voi_linear_design(design: Design, model, utility, prior_data, cfg) -> VoiResult:
    if is_deterministic(design):
        return voi_linear(deterministic_plan(design), model, utility, prior_data, cfg)
    frame = design.frame if hasattr(design, "frame") else design.plans[0][0].frame
    baseline = optimal_decision(_current(model, frame, prior_data, cfg), utility)[1]
    est = expected_utility_design(design, model, utility, prior_data, cfg)
    return _clamp(est.mean - baseline, baseline, "linear", est.std_error, est.mean)


# --------------------------------------------------------------------------
# Indifference price
# --------------------------------------------------------------------------


class _PriceProblem:
    """Both sides of the indifference equation as functions of the price ``V``.

    Per outer draw the posterior nodes, weights and value table are cached,
    so each evaluation is a handful of array operations.
    """

    def __init__(self, utility, curve: Expression, current, posteriors):
        self.curve = curve
        self.quadratic = isinstance(utility, DecisionQuadratic)
        if self.quadratic:
            c = target_vector(utility.target, current.dim)
            g0, w0 = self._target_nodes(current, c)
            gs = [self._target_nodes(p, c) for p in posteriors]
            self.g, self.w = self._stack([g for g, _ in gs]), self._stack([w for _, w in gs], weights=True)
            self.g0, self.w0 = g0[None, :], w0[None, :]
        else:
            table = utility.decisions
            self.v0, self.w0 = self._table_nodes(current, table)
            vs = [self._table_nodes(p, table) for p in posteriors]
            self.v, self.w = self._stack([v for v, _ in vs]), self._stack([w for _, w in vs], weights=True)
        self.rhs = float(self._side_quadratic(self.g0, self.w0, 0.0)[0] if self.quadratic
                         else self._side_table(self.v0[None], self.w0[None], 0.0)[0])

    @staticmethod
    def _target_nodes(post, c):
        pts, w = post.nodes()
        return pts @ c, w

    @staticmethod
    def _table_nodes(post, table):
        pts, w = post.nodes()
        return table.value_matrix(pts), w

    @staticmethod
    def _stack(arrays, weights: bool = False):
        width = max(a.shape[0] for a in arrays)
        if any(a.shape[0] != width for a in arrays):
            # ragged node sets are padded with zero-weight copies of their first node
            pad = (lambda a, k: np.zeros((k,) + a.shape[1:])) if weights else \
                  (lambda a, k: np.repeat(a[:1], k, axis=0))
            arrays = [np.concatenate([a, pad(a, width - a.shape[0])]) for a in arrays]
        return np.stack(arrays)

    def _side_table(self, v, w, price):
        # v: (draws, nodes, decisions); w: (draws, nodes)
        u = self.curve.on_values(v - price)
        return (w[:, :, None] * u).sum(axis=1).max(axis=1)

    def _side_quadratic(self, g, w, price):
        """``max_d sum_k w_k U(-(d - g_k)^2 - V)`` per row, by golden-section search.

        For increasing ``U`` the maximizer lies between the smallest and
        largest node.
        """
        lo, hi = g.min(axis=1), g.max(axis=1)

        def f(d):
            return (w * self.curve.on_values(-((d[:, None] - g) ** 2) - price)).sum(axis=1)

        a, b = lo.copy(), hi.copy()
        c = b - GOLDEN * (b - a)
        d = a + GOLDEN * (b - a)
        fc, fd = f(c), f(d)
        for _ in range(80):
            left = fc >= fd
            b = np.where(left, d, b)
            a = np.where(left, a, c)
            c_new = np.where(left, b - GOLDEN * (b - a), d)
            d_new = np.where(left, c, a + GOLDEN * (b - a))
            fe = f(np.where(left, c_new, d_new))
            fc, fd = np.where(left, fe, fd), np.where(left, fc, fe)
            c, d = c_new, d_new
            if np.all(b - a <= 1e-13 * (1.0 + np.abs(a))):
                break
        mid = 0.5 * (a + b)
        candidates = np.stack([f(lo), f(hi), f(mid)], axis=1)
        return candidates.max(axis=1)

    def lhs_draws(self, price: float) -> np.ndarray:
        if self.quadratic:
            return self._side_quadratic(self.g, self.w, price)
        return self._side_table(self.v, self.w, price)

    def gap(self, price: float) -> float:
        return float(np.mean(self.lhs_draws(price))) - self.rhs


def voi_price(plan: MeasurementPlan, model: ModelSpec, utility, curve, prior_data: Dataset | None = None,
              cfg: MCConfig | None = None, tol: float = 1e-6, max_iter: int = 200) -> VoiResult:
    """Largest price ``V`` at which buying the data is still worth it.

    Solves ``E[max_d E U(v(d, theta) - V) | new data] = max_d E U(v(d, theta))``
    by bisection; ``curve`` is the increasing transform ``U`` as an
    expression in ``v``.  All outer draws share one seed schedule.
    """
    _require_decision(utility)
    cfg = cfg or MCConfig()
    curve = curve if isinstance(curve, Expression) else Expression(curve)
    prior_data = prior_data if prior_data is not None else Dataset.empty(plan.frame)
    current, posts = outer_posteriors(plan, model, prior_data, cfg)
    baseline = optimal_decision(current, utility)[1]
    if len(plan) == 0:
        return VoiResult(0.0, baseline, "bisection", 0.0, baseline)
    prob = _PriceProblem(utility, curve, current, posts)
    expected = float(np.mean(prob.lhs_draws(0.0)))
    g0 = expected - prob.rhs
    if g0 < 0:
        return _clamp(g0, baseline, "bisection", 0.0, expected)
    lo, hi = 0.0, 1.0
    for _ in range(200):
        if prob.gap(hi) < 0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise ArithmeticError("could not bracket the price")
    resid_tol = 1e-5 * (1.0 + abs(prob.rhs))
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        gm = prob.gap(mid)
        if gm >= 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * (1.0 + abs(mid)) and abs(prob.gap(0.5 * (lo + hi))) <= resid_tol:
            break
    price = 0.5 * (lo + hi)
    # delta-method standard error: spread of the left side over its slope in V
    draws = prob.lhs_draws(price)
    h = max(1e-4, 1e-4 * abs(price))
    slope = (np.mean(prob.lhs_draws(price + h)) - np.mean(prob.lhs_draws(price - h))) / (2 * h)
    spread = float(np.std(draws, ddof=1) / math.sqrt(draws.size)) if draws.size > 1 and np.ptp(draws) > 0 else 0.0
    se = float(spread / abs(slope)) if slope != 0 else math.inf
    return VoiResult(price, baseline, "bisection", se, expected)


def price_residual(plan, model, utility, curve, price: float, prior_data=None, cfg=None) -> float:
    """``LHS(price) - RHS``, recomputed from scratch."""
    cfg = cfg or MCConfig()
    curve = curve if isinstance(curve, Expression) else Expression(curve)
    prior_data = prior_data if prior_data is not None else Dataset.empty(plan.frame)
    current, posts = outer_posteriors(plan, model, prior_data, cfg)
    return _PriceProblem(utility, curve, current, posts).gap(price)


# --------------------------------------------------------------------------
# Eligibility
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Eligibility:
    eligible: bool
    margin: float


def eligibility(plan: MeasurementPlan | None, cost, voi: VoiResult) -> Eligibility:
    """Data are worth buying only if their value strictly exceeds their cost.

    ``cost`` is a cost model (applied to ``plan``), an estimate or a number.
    """
    if isinstance(cost, UtilityEstimate):
        c = cost.mean
    elif isinstance(cost, (int, float)):
        c = float(cost)
    else:
        c = plan_cost(plan, cost)
    return Eligibility(bool(voi.value > c), voi.value - c)
