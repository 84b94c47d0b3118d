"""Exception taxonomy shared across the package.

Maps onto the CLI exit codes: validation/domain/integrity problems exit 1,
capacity blowups exit 2, numeric failures exit 3.
"""


class CouponError(Exception):
    """Base class for all package errors."""


class ValidationError(CouponError, ValueError):
    """Malformed input values (negative fares, bad flags, unparsable files)."""


class DomainError(CouponError, ValueError):
    """Structurally valid input outside an operation's domain."""


class CapacityError(CouponError, RuntimeError):
    """A combinatorial size cap was exceeded. Carries the offending size."""

    def __init__(self, message: str, size: int | None = None):
        super().__init__(message)
        self.size = size


class NumericError(CouponError, ArithmeticError):
    """Non-finite value where a finite one is required."""


class IntegrityError(CouponError, ValueError):
    """Raw log data contradicts itself (e.g. redemption of a dead coupon)."""
