"""Dirichlet solver for the supercritical Lagrangian phase equation.

``sum(arctan(eigenvalues of Hess u)) = h`` on box domains, in real
dimensions 2 and 3 and complex dimensions 1 and 2, with executable
checks of the structural inequalities the solver relies on.
"""

from .errors import (
    ConeFactViolation,
    ContinuityStall,
    DimensionMismatch,
    EigenConvergenceError,
    LagPhaseError,
    LinearSolveFailure,
    LineSearchStall,
    MaxItersExceeded,
    PreconditionError,
    SamplingBudgetExhausted,
    SolverError,
    SupercriticalViolation,
    ValidationError,
)
from .grid import BoxDomain, GridField, ProblemSpec, Setting
from .phase_core import PhaseBand, Spectrum, choose_A
from .solver import NewtonConfig, continuity_solve, laplace_solve, newton_solve, verify_subsolution

__version__ = "0.1.0"
