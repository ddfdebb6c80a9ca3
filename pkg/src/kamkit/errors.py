"""Exception types shared across the package."""


class KamkitError(Exception):
    """Base class for all package-specific errors."""


class DomainError(KamkitError, ValueError):
    """An argument left the domain an operation is defined on."""


class ContractViolation(KamkitError):
    """A caller broke a documented precondition (e.g. widening a declared scale)."""


class BudgetExceeded(KamkitError):
    """A norm budget needed for convergence does not hold.

    Raised by the guarded exponential when the contraction ratio exceeds 1/2,
    and by infinite products when the summed operator norms exceed the
    admissible fraction of the working radius.
    """


class ResonanceError(KamkitError):
    """A divisor that must stay away from zero (numerically) vanished."""


class NotTamed(KamkitError):
    """A growth sequence fails the summability gate; no schedule exists."""


class ScheduleInfeasible(KamkitError):
    """No cutoff index satisfies the schedule inequalities on the horizon."""


class InitializationFailed(KamkitError):
    """No candidate starting radius satisfies the smallness conditions."""


class NumericError(KamkitError):
    """A computation produced non-finite intermediates."""
