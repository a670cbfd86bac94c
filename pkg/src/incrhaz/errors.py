"""Exception taxonomy shared by the library and the CLI.

Each class maps to one CLI exit code so scripted callers can branch on
failure kind without parsing stderr.
"""

from __future__ import annotations


class IncrhazError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class SchemaError(IncrhazError):
    """Malformed or inconsistent input data (bad CSV row, invalid unit)."""

    exit_code = 2


class DomainError(SchemaError):
    """Evaluation requested outside the declared time or covariate domain."""


class FitError(IncrhazError):
    """A nuisance fit failed (separation, singular Hessian, too many
    bootstrap refit failures)."""

    exit_code = 3


class NumericError(IncrhazError):
    """A numeric precondition was violated during estimation (degenerate
    variance, non-finite intermediate, infinite hazard increment)."""

    exit_code = 3


class ConfigError(IncrhazError):
    """Invalid configuration (unknown learner, bad shift parameters,
    out-of-range option)."""

    exit_code = 4
