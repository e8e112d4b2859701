"""Exception hierarchy shared by all modules."""


class MpcTrackError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(MpcTrackError):
    """Invalid configuration (bad dimensions, schema violation, bad parameter)."""


class DimensionMismatch(MpcTrackError):
    """Operands with incompatible shapes."""


class NotControllable(MpcTrackError):
    """No controllability index n_c <= n achieves full rank."""


class DegenerateNullSpace(MpcTrackError):
    """Equilibrium-subspace dimension differs from the input dimension."""


class ProjectionDimTooHigh(MpcTrackError):
    """Explicit half-space form requested for more than 3 kept dimensions."""


class SolverError(MpcTrackError):
    """LP/QP solve failed in a context that cannot tolerate it."""


class NonConvex(MpcTrackError):
    """Quadratic cost matrix has a significantly negative eigenvalue."""


class MaxIterationsExceeded(MpcTrackError):
    """Iterative set computation did not terminate within its budget."""


class EmptySetError(MpcTrackError):
    """A polytope required to be nonempty is empty."""


class EmptyReachableSet(EmptySetError):
    """No admissible equilibrium exists inside the shrunk constraint set."""


class NoEquilibrium(MpcTrackError):
    """Requested output has no steady state on the equilibrium subspace."""


class NoConvergence(MpcTrackError):
    """Fixed-point iteration did not converge within its budget."""


class UnstableGain(MpcTrackError):
    """Closed-loop matrix has spectral radius at or above one."""


class SingularH(MpcTrackError):
    """Cost matrix not invertible even after the documented regularization."""


class RegulationInfeasible(MpcTrackError):
    """Initial state outside the regulation controller's feasible set."""
