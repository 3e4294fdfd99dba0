"""
Exception hierarchy for nlpmix.

The CLI maps each family onto an exit code: input problems exit 2,
configuration problems exit 3, numerical failures exit 4.
"""

from typing import Any, Dict, Optional


class NlpmixError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 1


# Input ------------------------------------------------------------------------

class MalformedInputError(NlpmixError, ValueError):
    """Input data could not be parsed (bad CSV, non-numeric cell, ...)."""

    exit_code = 2

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


# Configuration ----------------------------------------------------------------

class ConfigurationError(NlpmixError, ValueError):
    """Inconsistent or infeasible run configuration."""

    exit_code = 3


class InvalidPriorError(ConfigurationError):
    """Prior hyperparameters violate a family constraint."""


# Numerical --------------------------------------------------------------------

class NumericalError(NlpmixError, ArithmeticError):
    """A numerical routine could not deliver a trustworthy answer."""

    exit_code = 4


class InfeasibleRegionError(NumericalError):
    """The kept region of a truncated Normal has negligible probability."""


class RankDeficientError(NumericalError):
    """A design submatrix does not have full column rank."""


class AcceptanceRateError(NumericalError):
    """A rejection sampler accepted too few proposals to be useful."""

    def __init__(self, message: str, acceptance_rate: float):
        super().__init__(message)
        self.acceptance_rate = acceptance_rate


class QuadratureError(NumericalError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message: str, abserr: float):
        super().__init__(f"{message} (achieved abserr={abserr:.3g})")
        self.abserr = abserr


class BracketError(NumericalError):
    """Root bracketing failed."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
