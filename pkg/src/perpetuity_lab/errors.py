"""Exception types. Each one carries a short machine-readable ``code``."""


class PerpetuityError(Exception):
    code = "error"


class PreconditionError(PerpetuityError, ValueError):
    """A standing assumption of a routine is violated."""
    code = "precondition"


class NotContractive(PreconditionError):
    code = "not_contractive"


class SlopeOne(PreconditionError):
    code = "slope_one"


class DegenerateM(PreconditionError):
    code = "degenerate_m"


class PreconditionUnbounded(PreconditionError):
    code = "m_support_unbounded"


class PreconditionNotDegenerateM(PreconditionError):
    code = "m_not_degenerate"


class SupportConditionUnverifiable(PreconditionError):
    code = "support_unverifiable"


class ScheduleDirectionMismatch(PreconditionError):
    code = "schedule_direction"


class TiltingInfeasible(PreconditionError):
    code = "tilting_infeasible"


class BudgetExceeded(PerpetuityError):
    code = "budget_exceeded"


class InsufficientTailData(PerpetuityError):
    code = "insufficient_tail_data"


class HorizonExhausted(PerpetuityError):
    code = "horizon_exhausted"


class SimulationOverflow(PerpetuityError, OverflowError):
    """A state does not fit in a double. ``step`` is the first offending index."""
    code = "overflow"

    def __init__(self, step, message=None):
        self.step = int(step)
        super().__init__(message or f"state exceeds the float range at step {self.step}")


class CouplingViolation(PerpetuityError):
    code = "coupling_violation"


class BoundViolation(PerpetuityError, AssertionError):
    """A pathwise inequality that should hold on every path failed."""
    code = "bound_violation"
