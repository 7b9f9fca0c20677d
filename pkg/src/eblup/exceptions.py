"""Error types raised by the eblup package.

Everything derives from :class:`EblupError` so callers can catch the whole
family at once.  Input-validation errors also derive from ``ValueError`` and
keep their Python semantics.
"""

from __future__ import annotations


class EblupError(Exception):
    """Base class for all errors raised by this package."""


class NonPositivePhi(EblupError, ValueError):
    """A sampling variance phi_i is zero or negative."""


class RankDeficientX(EblupError, ValueError):
    """The fixed-effect design matrix X does not have full column rank."""


class TooFewObservations(EblupError, ValueError):
    """Fewer observations than fixed-effect parameters (n <= p)."""


class EmptyGroup(EblupError, ValueError):
    """A declared group index has no observations."""


class ZeroBlock(EblupError, ValueError):
    """A random-effect design block Z_i is identically zero."""


class IndexOutOfRange(EblupError, IndexError):
    """A component or area index is outside its valid range."""


class OutsideParameterSpace(EblupError, ValueError):
    """A variance parameter vector lies outside the parameter space.

    ``component`` is the offending index into sigma.
    """

    def __init__(self, component: int, message: str | None = None):
        self.component = component
        super().__init__(message or f"sigma[{component}] outside the parameter space")


class NotPositiveDefinite(EblupError, ArithmeticError):
    """A covariance matrix required to be positive definite is not."""


class SingularGram(EblupError, ArithmeticError):
    """X' Sigma^-1 X is numerically singular."""


class SingularInformation(EblupError, ArithmeticError):
    """The expected information matrix is not invertible."""


class SimulationError(EblupError, RuntimeError):
    """A Monte Carlo run failed, e.g. too many replicate failures."""
