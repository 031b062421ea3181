"""Design of observational studies by expected utility, value of information and search."""

from __future__ import annotations

from .core import (
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
    design_support,
    deterministic_plan,
    null_design,
    plan_cardinality,
    plan_cost,
    sample_plan,
)
from .expected_utility import (
    MCConfig,
    UtilityEstimate,
    expected_cost,
    expected_utility_design,
    expected_utility_plan,
    frequentist_expected_utility,
)
from .models import GammaPrior, LinReg, NestedNormalMean, NormalMean, TwoStateCTMC, ctmc_transition_matrix
from .utility import (
    AOptimality,
    ConstantUtility,
    DecisionQuadratic,
    DecisionTable,
    DOptimality,
    FiniteDecisions,
    NegPosteriorVariance,
)
from .voi import eligibility, voi_linear, voi_price

__all__ = [
    "AOptimality",
    "ConstantUtility",
    "ctmc_transition_matrix",
    "Dataset",
    "DecisionQuadratic",
    "DecisionTable",
    "design_support",
    "Deterministic",
    "deterministic_plan",
    "DOptimality",
    "eligibility",
    "expected_cost",
    "expected_utility_design",
    "expected_utility_plan",
    "FiniteDecisions",
    "frequentist_expected_utility",
    "GammaPrior",
    "Hierarchical",
    "Hierarchy",
    "LinReg",
    "MCConfig",
    "MeasurementPlan",
    "MISSING",
    "NegPosteriorVariance",
    "NestedNormalMean",
    "NormalMean",
    "null_design",
    "PerMeasurement",
    "plan_cardinality",
    "plan_cost",
    "sample_plan",
    "SimpleRandomSample",
    "StudyFrame",
    "SumCost",
    "TwoStateCTMC",
    "UtilityEstimate",
    "voi_linear",
    "voi_price",
    "WeightedPlans",
]

__version__ = "0.1.0"
