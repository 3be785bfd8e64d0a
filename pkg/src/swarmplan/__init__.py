"""Trajectory planning for vehicle fleets with pairwise collision avoidance.

Two planners share one discrete-time model and one conic subproblem layer:

* a penalty sequential-convexification planner that linearizes the nonconvex
  separation constraints around accumulated anchor trajectories and drives
  slack to zero under an escalating penalty weight, and
* a mixed-integer conic baseline that outer-approximates the separation
  sphere by an axis-aligned cube and searches face activations by
  branch and bound.

An independent feasibility checker validates planner output against the raw
scenario data, without going through the optimization layer.
"""

from .scenario import (
    ArenaBounds,
    GeometryError,
    Scenario,
    ScenarioError,
    ScenarioParseError,
    ScenarioValidationError,
    VehicleSpec,
    generate_benchmark,
    load_scenario,
    scenario_to_dict,
    dumps_scenario,
)
from .dynamics import (
    DiscreteModel,
    Trajectory,
    TrajectoryFormatError,
    discretize,
    dynamics_residual,
    propagate,
    read_trajectory_csv,
    rollout,
    write_trajectory_csv,
)
from .socp import (
    ConicProgram,
    DegenerateAnchorError,
    ProgramError,
    SecondOrderCone,
    VariableMap,
    add_linearized_collision_row,
    add_slack_columns,
    build_base_problem,
    set_slack_weight,
)
from .solver import (
    SolverSettings,
    SolverSolution,
    SolverStatus,
    residuals,
    solve,
)
from .dca import (
    DcaConfig,
    DegenerateSeparationError,
    IterationRecord,
    PlanResult,
    PlanStatus,
    delta_gap,
    initialize_trajectory,
    plan_dca,
    separation,
    separation_gradient,
    write_iteration_log,
)
from .micp import (
    BnbResult,
    Disjunction,
    EnumerationGuardError,
    PolyApproxBlock,
    branch_and_bound,
    build_cubic_micp,
    enumerate_exhaustive,
    poly_lorentz2_rows,
    poly_membership,
)
from .verify import (
    FeasibilityReport,
    check_feasibility,
    evaluate_objective,
    min_pairwise_distance,
    write_distance_csv,
)

__version__ = "0.1.0"
