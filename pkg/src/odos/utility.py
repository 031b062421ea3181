"""Utilities, value functions and decision spaces."""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .errors import DimensionMismatch, SingularMatrix
from .inference import Particles, Posterior

# eigenvalue ratio below which an information matrix counts as singular
SINGULAR_RTOL = 1e-12


# --------------------------------------------------------------------------
# Target functionals g(theta) = c' theta
# --------------------------------------------------------------------------


def target_vector(target, dim: int) -> np.ndarray:
    """Coefficient vector of a linear functional: an index or explicit weights."""
    if isinstance(target, (int, np.integer)):
        if not 0 <= target < dim:
            raise DimensionMismatch(f"target component {target} outside a {dim}-dimensional parameter")
        c = np.zeros(dim)
        c[int(target)] = 1.0
        return c
    c = np.asarray(target, dtype=float).reshape(-1)
    if c.size != dim:
        raise DimensionMismatch(f"target has {c.size} weights, parameter has {dim} components")
    return c


# --------------------------------------------------------------------------
# Safe expressions over theta
# --------------------------------------------------------------------------

_FUNCS: dict[str, Callable] = {
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "min": np.minimum,
    "max": np.maximum,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}
_ALIASES = {"lam": 0, "mu": 1}


class Expression:
    """Arithmetic expression compiled from text and evaluated on arrays.

    Names: ``theta[k]`` (or bare ``theta`` when the parameter is scalar),
    ``beta[k]`` as a synonym, ``lam`` / ``mu`` for the two intensities, and
    ``v`` when the expression is a curve over values.  Functions: exp, log,
    sqrt, abs, min, max.
    """

    def __init__(self, text: str):
        self.text = str(text)
        try:
            self._tree = ast.parse(self.text, mode="eval").body
        except SyntaxError as exc:
            raise ValueError(f"cannot parse expression {self.text!r}: {exc.msg}") from None
        self._check(self._tree)

    def __repr__(self) -> str:
        return f"Expression({self.text!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Expression) and other.text == self.text

    def __hash__(self) -> int:
        return hash(self.text)

    def _check(self, node) -> None:
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ValueError(f"only numeric literals are allowed in {self.text!r}")
        elif isinstance(node, ast.Name):
            if node.id not in ("theta", "beta", "v", *_ALIASES, *_CONSTS):
                raise ValueError(f"unknown name {node.id!r} in {self.text!r}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ValueError(f"operator not allowed in {self.text!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ValueError(f"operator not allowed in {self.text!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Subscript):
            if not (isinstance(node.value, ast.Name) and node.value.id in ("theta", "beta")):
                raise ValueError(f"only theta[k] / beta[k] may be indexed in {self.text!r}")
            if not (isinstance(node.slice, ast.Constant) and isinstance(node.slice.value, int)):
                raise ValueError(f"index must be an integer literal in {self.text!r}")
        elif isinstance(node, ast.Call):
            if not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS) or node.keywords:
                raise ValueError(f"function not allowed in {self.text!r}")
            for a in node.args:
                self._check(a)
        else:
            raise ValueError(f"unsupported syntax {type(node).__name__} in {self.text!r}")

    def _column(self, theta: np.ndarray, k: int) -> np.ndarray:
        if not 0 <= k < theta.shape[1]:
            raise DimensionMismatch(f"{self.text!r} indexes component {k} of a {theta.shape[1]}-dim parameter")
        return theta[:, k]

    def _eval(self, node, theta, v):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id in _CONSTS:
                return _CONSTS[node.id]
            if node.id == "v":
                if v is None:
                    raise ValueError(f"{self.text!r} uses v outside a value curve")
                return v
            if theta is None:
                raise ValueError(f"{self.text!r} uses parameters inside a value curve")
            if node.id in _ALIASES:
                return self._column(theta, _ALIASES[node.id])
            if theta.shape[1] != 1:
                raise DimensionMismatch(f"bare {node.id!r} needs a scalar parameter")
            return theta[:, 0]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, theta, v), self._eval(node.right, theta, v))
        if isinstance(node, ast.UnaryOp):
            x = self._eval(node.operand, theta, v)
            return -x if isinstance(node.op, ast.USub) else x
        if isinstance(node, ast.Subscript):
            if theta is None:
                raise ValueError(f"{self.text!r} uses parameters inside a value curve")
            return self._column(theta, node.slice.value)
        f = _FUNCS[node.func.id]
        return f(*[self._eval(a, theta, v) for a in node.args])

    def on_theta(self, theta: np.ndarray) -> np.ndarray:
        """Evaluate for each row of an ``(n, dim)`` parameter array."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        with np.errstate(all="ignore"):
            out = self._eval(self._tree, theta, None)
        return np.broadcast_to(np.asarray(out, dtype=float), (theta.shape[0],)).copy()

    def on_values(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        with np.errstate(all="ignore"):
            out = self._eval(self._tree, None, v)
        return np.broadcast_to(np.asarray(out, dtype=float), v.shape).copy()


# --------------------------------------------------------------------------
# Decision spaces and utility specifications
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteDecisions:
    """Labelled decisions with a value expression ``v(d, theta)`` each."""

    labels: tuple[str, ...]
    values: tuple[Expression, ...]

    def __post_init__(self):
        labels = tuple(str(s) for s in self.labels)
        values = tuple(v if isinstance(v, Expression) else Expression(v) for v in self.values)
        if not labels:
            raise ValueError("a finite decision space needs at least one decision")
        if len(labels) != len(values) or len(set(labels)) != len(labels):
            raise ValueError("decision labels must be unique, one value expression per label")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_mapping(cls, table: dict[str, str]) -> "FiniteDecisions":
        return cls(tuple(table), tuple(table.values()))

    def value_matrix(self, theta: np.ndarray) -> np.ndarray:
        """``(n, n_decisions)`` values for an ``(n, dim)`` parameter array."""
        return np.column_stack([e.on_theta(theta) for e in self.values])


@dataclass(frozen=True)
class RealLine:
    """Point-estimation decisions ``d`` on the real line."""


DecisionSpace = Union[FiniteDecisions, RealLine]


@dataclass(frozen=True)
class NegPosteriorVariance:
    target: object = 0


@dataclass(frozen=True)
class DOptimality:
    pass


@dataclass(frozen=True)
class AOptimality:
    pass


@dataclass(frozen=True)
class DecisionQuadratic:
    """``v(d, theta) = -(d - g(theta))^2`` over the real line."""

    target: object = 0


@dataclass(frozen=True)
class DecisionTable:
    decisions: FiniteDecisions


@dataclass(frozen=True)
class ConstantUtility:
    value: float = 0.0


UtilitySpec = Union[NegPosteriorVariance, DOptimality, AOptimality, DecisionQuadratic, DecisionTable, ConstantUtility]

INFORMATION_UTILITIES = (DOptimality, AOptimality)
DECISION_UTILITIES = (DecisionQuadratic, DecisionTable)


def is_decision_utility(utility) -> bool:
    return isinstance(utility, DECISION_UTILITIES)


def decision_space(utility) -> DecisionSpace:
    if isinstance(utility, DecisionTable):
        return utility.decisions
    if isinstance(utility, DecisionQuadratic):
        return RealLine()
    raise TypeError(f"{type(utility).__name__} has no decision space")


# --------------------------------------------------------------------------
# Information-based utilities
# --------------------------------------------------------------------------


def _summed(expected_info, observed_info) -> np.ndarray:
    a = np.asarray(expected_info, dtype=float)
    b = np.asarray(observed_info, dtype=float)
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"information matrices of shapes {a.shape} and {b.shape}")
    return a + b


def logdet_or_neg_inf(m: np.ndarray) -> float:
    """``log det`` of a symmetric PSD matrix, ``-inf`` when numerically singular."""
    m = 0.5 * (m + m.T)
    eig = np.linalg.eigvalsh(m)
    top = eig.max(initial=0.0)
    if top <= 0.0 or eig.min() <= SINGULAR_RTOL * top:
        return -math.inf
    return float(np.log(eig).sum())


def d_optimality_utility(expected_info, observed_info) -> float:
    """``log det(I_new + I_obs)``; ``-inf`` when the sum is singular."""
    return logdet_or_neg_inf(_summed(expected_info, observed_info))


def a_optimality_utility(expected_info, observed_info) -> float:
    """``-trace((I_new + I_obs)^{-1})``."""
    m = _summed(expected_info, observed_info)
    m = 0.5 * (m + m.T)
    eig = np.linalg.eigvalsh(m)
    top = eig.max(initial=0.0)
    if top <= 0.0 or eig.min() <= SINGULAR_RTOL * top:
        raise SingularMatrix("information matrix is singular")
    return float(-np.sum(1.0 / eig))


def information_utility(utility, expected_info, observed_info) -> float:
    if isinstance(utility, DOptimality):
        return d_optimality_utility(expected_info, observed_info)
    if isinstance(utility, AOptimality):
        return a_optimality_utility(expected_info, observed_info)
    raise TypeError(f"{type(utility).__name__} is not information-based")


# --------------------------------------------------------------------------
# Posterior-based utilities
# --------------------------------------------------------------------------


def neg_posterior_variance(posterior: Posterior, target=0) -> float:
    c = target_vector(target, posterior.dim)
    return -posterior.functional_moments(c)[1]


def _table_values(posterior: Posterior, table: FiniteDecisions) -> np.ndarray:
    pts, w = posterior.nodes()
    return w @ table.value_matrix(pts)


def _argmax_lexicographic(labels: Sequence[str], values: np.ndarray) -> int:
    best = None
    for k in sorted(range(len(labels)), key=lambda i: labels[i]):
        if best is None or values[k] > values[best]:
            best = k
    return best


def optimal_decision(posterior: Posterior, utility) -> tuple[object, float]:
    """Best decision and its posterior expected value.

    Quadratic loss: the posterior mean of the target, valued at minus its
    posterior variance.  Finite tables: every decision is averaged over the
    posterior; ties go to the lexicographically first label.
    """
    if isinstance(utility, DecisionQuadratic):
        c = target_vector(utility.target, posterior.dim)
        mean, var = posterior.functional_moments(c)
        return mean, -var
    if isinstance(utility, DecisionTable):
        vals = _table_values(posterior, utility.decisions)
        k = _argmax_lexicographic(utility.decisions.labels, vals)
        return utility.decisions.labels[k], float(vals[k])
    raise TypeError(f"{type(utility).__name__} is not decision-based")


def posterior_utility(posterior: Posterior, utility) -> float:
    """Utility that depends on the data only through the posterior."""
    if isinstance(utility, NegPosteriorVariance):
        return neg_posterior_variance(posterior, utility.target)
    if isinstance(utility, DECISION_UTILITIES):
        return optimal_decision(posterior, utility)[1]
    if isinstance(utility, ConstantUtility):
        return float(utility.value)
    raise TypeError(f"{type(utility).__name__} is not posterior-based")


def decision_values(utility, theta: np.ndarray) -> np.ndarray:
    """Value table ``v(d, theta)`` for finite decision spaces, ``(n, n_decisions)``."""
    return decision_space(utility).value_matrix(theta)


def point_mass(theta) -> Particles:
    t = np.atleast_1d(np.asarray(theta, dtype=float))
    return Particles(t[None, :], np.ones(1))

