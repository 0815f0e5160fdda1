"""Exception types raised by the estimation library."""


class InvalidInputError(ValueError):
    """Malformed or out-of-range arguments (non-finite matrices, bad shapes, T < 0, ...)."""


class ConditioningError(ArithmeticError):
    """A linear solve that should be well posed turned out numerically singular."""


class StabilityError(ValueError):
    """An operation that needs a Hurwitz state matrix received an unstable one."""


class DomainError(ValueError):
    """A query time or measurement lies outside the supported time domain."""


class SizeGuardError(ValueError):
    """A brute-force oracle problem is too large for a dense solve."""
