"""Exception types raised across the package."""

from __future__ import annotations


class OdosError(Exception):
    """Base class for all package errors."""


class SupportTooLarge(OdosError):
    """A random design's support is too large to enumerate."""


class MissingHierarchy(OdosError):
    """A hierarchical cost or model was used on a frame without a hierarchy."""


class NonFiniteValue(OdosError):
    """An observed value is NaN or infinite."""


class DegenerateChain(OdosError):
    """Both CTMC intensities are zero while time elapses."""


class DegenerateChainWarning(UserWarning):
    """Identity transition matrix returned for a chain with no transitions."""


class SingularMatrix(OdosError):
    """A matrix that must be inverted is numerically singular."""


class DegenerateWeights(OdosError):
    """Importance weights collapsed; the effective sample size is too small."""

    def __init__(self, ess: float, message: str | None = None):
        self.ess = ess
        super().__init__(message or f"effective sample size {ess:.2f} < 10; raise n_particles")


class DimensionMismatch(OdosError):
    pass


class SpaceTooLarge(OdosError):
    """Exhaustive enumeration would exceed the configured limit."""


class Infeasible(OdosError):
    """No design satisfies the constraint."""


class PoolExhausted(OdosError):
    """Not enough candidate units or slots remain."""


class InvalidGrid(OdosError):
    pass


class ConfigError(OdosError):
    pass


class ParseError(ConfigError):
    """Malformed configuration document (carries line/column when known)."""


class ValidationError(ConfigError):
    """Configuration is well-formed but violates a constraint."""
