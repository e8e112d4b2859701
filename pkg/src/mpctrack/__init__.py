"""MPC for setpoint tracking on constrained discrete-time LTI systems.

Synthesizes terminal ingredients, condenses tracking/regulation controllers
into canonical QPs, solves them with an in-repo interior-point method, and
simulates the closed loop with monitors for feasibility, stability, and
offset minimization.
"""

from .errors import (
    MpcTrackError, ConfigError, DimensionMismatch, NotControllable,
    DegenerateNullSpace, ProjectionDimTooHigh, SolverError, NonConvex,
    MaxIterationsExceeded, EmptySetError, EmptyReachableSet, NoEquilibrium,
    NoConvergence, UnstableGain, SingularH, RegulationInfeasible,
)
from .qp import QpProblem, QpSolution, Status, FarkasCertificate, solve, solve_lp
from .polytope import (
    HPolytope, is_empty, remove_redundant, intersect, fm_project,
    affine_image, mais, chebyshev_center, vertices_2d,
)
from .model import (
    LtiModel, ConstraintSet, SteadyStateMap, ReachableSets,
    check_stabilizability, check_output_rank, controllability_index,
    steady_state_basis, reachable_steady_sets, equilibrium_for_setpoint,
    sample_theta,
)
from .synthesis import (
    TerminalIngredients, dlqr, dlyap_for_gain,
    build_invariant_set_for_tracking, make_terminal_ingredients,
)
from .controller import (
    OffsetCostSpec, MpctConfig, CondensedQp, ControlResult,
    build_prediction, condense, build_regulation, solve_mpct, feasible,
    parameter_transform,
)
from .sim import (
    Scenario, Trace, run_closed_loop, gamma_sweep, feasible_set_compare,
)

__version__ = "0.1.0"
