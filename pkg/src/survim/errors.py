"""Exception taxonomy.

Two families, mirrored by the CLI exit codes: problems with the inputs or the
requested configuration (exit 2) and numerical failures inside an otherwise
valid run (exit 3).
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class SurvimError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InputError(SurvimError):
    """Invalid inputs, configuration, or requests (CLI exit 2)."""

    exit_code = EXIT_VALIDATION


class SchemaError(InputError):
    """Malformed tabular input or config document (missing/unknown keys)."""


class ValidationError(InputError):
    """Well-formed input carrying invalid values."""


class DegenerateDataError(InputError):
    """Data that cannot support the requested fit (e.g. no events)."""


class ConfigurationError(InputError):
    """Inconsistent run parameters (e.g. n < 2K)."""


class ContractError(InputError):
    """An operation called outside its stated preconditions."""


class IdentificationError(InputError):
    """The target is not identified on (0, tau] for these data."""


class UnsupportedSetError(InputError):
    """A feature set with no closed-form truth oracle."""


class RedirectError(InputError):
    """Request that must be routed to a different operation."""


class NumericalError(SurvimError):
    """Numerical failure during an otherwise valid run (CLI exit 3)."""

    exit_code = EXIT_NUMERICAL


class FitError(NumericalError):
    """A nuisance or learner fit failed."""


class RankDeficiencyError(FitError):
    """Design matrix not of full column rank; names the offending columns."""


class NonConvergenceError(FitError):
    """Iterative fit did not reach tolerance; carries the last gradient norm."""


class SeparationError(FitError):
    """Logistic fit diverged (|linear predictor| beyond the guard)."""


class HazardDerivationError(NumericalError):
    """Survival hit zero before tau, so hazard increments are undefined."""


class SingularityError(NumericalError):
    """A denominator underflowed inside an influence-curve evaluation."""


class DegenerateMeasureError(NumericalError):
    """V2 = 0: no comparable pairs at this tau."""


class FoldDegeneracyError(NumericalError):
    """A fold has no events before tau."""


class InversionError(NumericalError):
    """Confidence-interval test inversion failed to bracket."""


class StudyError(NumericalError):
    """Too many replicate failures in a simulation study."""


class GeneratorError(InputError):
    """Invalid scenario specification (e.g. covariance not positive definite)."""
