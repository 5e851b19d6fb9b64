"""Exception hierarchy shared by the package."""


class SymHeckmanError(Exception):
    """Base class for every error raised by symheckman."""


class DomainError(SymHeckmanError, ValueError):
    """An argument lies outside the domain of a distribution or link."""


class NonNormalizableGeneratorError(SymHeckmanError, ValueError):
    """A density generator whose integral over [0, inf) diverges."""


class QuadratureError(SymHeckmanError, ArithmeticError):
    """Adaptive quadrature failed to reach the requested tolerance.

    Attributes
    ----------
    diagnostics : dict
        Integration limits, the estimate, the error estimate and the
        warning emitted by the integrator.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SpecError(SymHeckmanError, ValueError):
    """Inconsistent model specification, data or parameter dimensions."""


class LikelihoodError(SymHeckmanError, ArithmeticError):
    """The log-likelihood is not finite at the supplied parameters."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class InitializationError(SymHeckmanError, RuntimeError):
    """Starting values could not be computed (e.g. probit separation)."""


class UnsupportedGeneratorError(SymHeckmanError, ValueError):
    """Operation not available for the given density generator."""


class StudyError(SymHeckmanError, RuntimeError):
    """A Monte Carlo study had too many failed replicates."""


class DiagnosticError(SymHeckmanError, ValueError):
    """Residual or QQ computations cannot be carried out."""


class ComparisonError(SymHeckmanError, ValueError):
    """Fits passed to a comparison do not share the same data."""


class DataError(SymHeckmanError, ValueError):
    """Invalid input data file or configuration."""


class ConfigError(SymHeckmanError, ValueError):
    """A run configuration file is malformed or inconsistent."""


class LockError(SymHeckmanError, RuntimeError):
    """Another run holds the lock on the output directory."""


class DataWarning(UserWarning):
    """Suspicious but usable input data (e.g. outcome on a censored row)."""
