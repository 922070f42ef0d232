"""Exception hierarchy shared by the library and the CLI."""


class LagPhaseError(Exception):
    """Base class for all library errors."""


class PreconditionError(LagPhaseError, ValueError):
    """An operation was called with arguments outside its domain."""


class DimensionMismatch(PreconditionError):
    pass


class ConeFactViolation(LagPhaseError, AssertionError):
    """A supercritical spectrum failed one of the structural cone facts.

    Mathematically this cannot happen; seeing it means the input was
    corrupted or roundoff dominated the check.
    """


class SamplingBudgetExhausted(LagPhaseError, RuntimeError):
    pass


class EigenConvergenceError(LagPhaseError, RuntimeError):
    def __init__(self, sweeps, off_norm):
        super().__init__(
            f"Jacobi iteration did not converge after {sweeps} sweeps "
            f"(off-diagonal norm {off_norm:.3e})"
        )
        self.sweeps = sweeps
        self.off_norm = off_norm


class ValidationError(LagPhaseError, ValueError):
    """Problem data violates a structural invariant."""


class SolverError(LagPhaseError, RuntimeError):
    """Base class for failures of the nonlinear solvers."""


class MaxItersExceeded(SolverError):
    pass


class LineSearchStall(SolverError):
    pass


class LinearSolveFailure(SolverError):
    pass


class SupercriticalViolation(SolverError):
    pass


class ContinuityStall(SolverError):
    pass
