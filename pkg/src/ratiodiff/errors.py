"""Exception types shared across the package.

Everything numerical raises one of these instead of a bare assert so the
CLI can map failures onto stable exit codes.
"""


class RatiodiffError(Exception):
    """Base class for package errors."""


class ConfigError(RatiodiffError, ValueError):
    """Invalid or inconsistent configuration (unknown key, mode mismatch, bad enum)."""


class DomainError(RatiodiffError, ValueError):
    """Argument outside its mathematical domain (negative time, bad simplex vector)."""


class CapacityError(RatiodiffError, ValueError):
    """Exact tabular operation requested on a space too large to enumerate."""


class NumericError(RatiodiffError, ArithmeticError):
    """Numerical guard tripped (overflow, non-finite value, singular state)."""


class VerificationError(RatiodiffError):
    """A named verification check failed."""
