"""Penalty sequential-convexification planner for pairwise separation.

The collision constraint, separation >= d for every vehicle pair at every
step, has a convex left-hand side, so d - separation(x) <= s is a
difference-of-convex constraint. Each outer iteration replaces the
separation by its first-order expansion around every anchor trajectory
collected so far, solves the resulting conic subproblem with the slack
total weighted by a penalty tau, appends the new solution to the anchor
set, and escalates tau by a factor mu up to a ceiling tau_max.

Because the expansion never overestimates a convex function, every
linearized row is implied by the true constraint. The subproblems therefore
relax monotonically tighter versions of the true problem, and once tau sits
at its ceiling the penalized objective stops improving; the loop exits when
that improvement, delta, falls within epsilon. Feasibility of the final
iterate is judged by the slack magnitudes and an independent distance
check, not by trusting the subproblem status.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np

from .dynamics import Trajectory
from .scenario import Scenario
from .socp import (ConicProgram, VariableMap, add_linearized_collision_row,
                   add_slack_columns, build_base_problem, set_slack_weight)
from .solver import SolverSettings, SolverStatus, solve
from .verify import min_pairwise_distance

__all__ = [
    "DegenerateSeparationError",
    "DcaConfig",
    "IterationRecord",
    "PlanResult",
    "PlanStatus",
    "separation",
    "separation_gradient",
    "initialize_trajectory",
    "delta_gap",
    "DcaWorkspace",
    "dca_iterate",
    "plan_dca",
    "write_iteration_log",
]


class DegenerateSeparationError(ValueError):
    """Pair positions coincide, so the separation gradient is undefined."""


class PlanStatus(str, Enum):
    CONVERGED_FEASIBLE = "converged_feasible"
    CONVERGED_INFEASIBLE_SLACK = "converged_infeasible_slack"
    ITERATION_LIMIT = "iteration_limit"
    SUBPROBLEM_FAILURE = "subproblem_failure"


@dataclass(frozen=True)
class DcaConfig:
    """Knobs for the outer penalty loop.

    ``anchor_policy`` is ``accumulate_all`` (keep every linearization, the
    default) or ``keep_last_m`` (evict all but the newest ``keep_last``
    anchors each iteration, trading conservatism for smaller subproblems).
    ``init_policy`` selects the first anchor; see initialize_trajectory.
    """

    tau0: float = 1.0
    mu: float = 1.5
    tau_max: float = 1e4
    epsilon: float = 1e-4
    max_iters: int = 1000
    slack_tol: float = 1e-6
    anchor_policy: str = "accumulate_all"
    keep_last: int = 20
    init_policy: str = "straight_line"
    solver: SolverSettings = field(
        default_factory=lambda: SolverSettings(tol_feas=1e-6, tol_gap=1e-6))

    def __post_init__(self):
        if not (self.tau0 >= 0 and math.isfinite(self.tau0)):
            raise ValueError(f"tau0 must be >= 0, got {self.tau0!r}")
        if not (self.mu > 1.0 and math.isfinite(self.mu)):
            raise ValueError(f"mu must be > 1 so the penalty escalates, got {self.mu!r}")
        if not (self.tau_max >= self.tau0 and math.isfinite(self.tau_max)):
            raise ValueError(f"tau_max must be >= tau0, got {self.tau_max!r}")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive, got {self.epsilon!r}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters!r}")
        if not (self.slack_tol > 0 and math.isfinite(self.slack_tol)):
            raise ValueError(f"slack_tol must be positive, got {self.slack_tol!r}")
        if self.anchor_policy not in ("accumulate_all", "keep_last_m"):
            raise ValueError(f"unknown anchor_policy {self.anchor_policy!r}")
        if self.keep_last < 1:
            raise ValueError(f"keep_last must be >= 1, got {self.keep_last!r}")
        if self.init_policy not in ("straight_line", "hover_then_jump"):
            raise ValueError(f"unknown init_policy {self.init_policy!r}")


@dataclass(frozen=True)
class IterationRecord:
    """One outer iteration: objective split, slack summary, and bookkeeping.

    ``delta`` is the change of the penalized objective relative to the
    previous iteration (infinity on the first one). ``objective_f0`` is the
    subproblem objective with the penalty term removed.
    """

    m: int
    objective_f0: float
    penalty_term: float
    max_slack: float
    delta: float
    tau: float
    subproblem_status: str


@dataclass
class PlanResult:
    trajectory: Trajectory
    status: PlanStatus
    log: List[IterationRecord]
    min_separation: float

    @property
    def iterations(self) -> int:
        return len(self.log)


def separation(trajectory: Trajectory, i: int, j: int, k: int) -> float:
    """Euclidean distance between vehicles i and j at step k (0-based)."""
    diff = trajectory.states[i, k, :3] - trajectory.states[j, k, :3]
    return float(np.linalg.norm(diff))


def separation_gradient(trajectory: Trajectory, i: int, j: int, k: int,
                        tol: float = 1e-12) -> np.ndarray:
    """Gradient of the pair separation w.r.t. (p_i, p_j), as a 6-vector.

    The first three entries are the unit vector from j to i, the last three
    its negation; the stacked norm is sqrt(2). Raises
    DegenerateSeparationError when the separation is at or below ``tol``.
    """
    diff = trajectory.states[i, k, :3] - trajectory.states[j, k, :3]
    gap = float(np.linalg.norm(diff))
    if gap <= tol:
        raise DegenerateSeparationError(
            f"vehicles {i} and {j} coincide at step {k} (gap {gap:g})")
    unit = diff / gap
    return np.concatenate([unit, -unit])


def initialize_trajectory(scenario: Scenario, policy: str = "straight_line") -> Trajectory:
    """First anchor trajectory.

    ``straight_line`` interpolates positions from start to goal with
    velocities from forward differences; ``hover_then_jump`` stays at the
    start for the first half of the horizon and interpolates over the
    second half. Neither satisfies the dynamics; anchors only need
    positions to linearize around.
    """
    n, horizon, dt = scenario.n_vehicles, scenario.horizon, scenario.dt
    states = np.zeros((n, horizon, 6))
    inputs = np.zeros((n, horizon, 3))
    for i, veh in enumerate(scenario.vehicles):
        if policy == "straight_line":
            alpha = np.linspace(0.0, 1.0, horizon)[:, None]
        elif policy == "hover_then_jump":
            half = horizon // 2
            ramp = np.linspace(0.0, 1.0, horizon - half)
            alpha = np.concatenate([np.zeros(half), ramp])[:, None]
        else:
            raise ValueError(f"unknown init policy {policy!r}")
        pos = (1.0 - alpha) * veh.start_position + alpha * veh.goal_position
        states[i, :, :3] = pos
        states[i, :-1, 3:] = (pos[1:] - pos[:-1]) / dt
        states[i, -1, 3:] = veh.goal_velocity
    return Trajectory(states=states, inputs=inputs)


def delta_gap(previous: IterationRecord, current: IterationRecord) -> float:
    """Change of the penalized objective between consecutive records."""
    if current.m != previous.m + 1:
        raise ValueError(f"records are not consecutive: m={previous.m} then m={current.m}")
    return (current.objective_f0 + current.penalty_term) - (
        previous.objective_f0 + previous.penalty_term)


@dataclass
class DcaWorkspace:
    """Mutable state shared across outer iterations.

    The conic program is built once; iterations only append or rebuild
    linearized rows, adjust the slack weight, and solve.
    """

    scenario: Scenario
    config: DcaConfig
    program: ConicProgram
    vmap: VariableMap
    anchors: List[Trajectory]
    base_ineq_count: int
    slack_cols: np.ndarray
    tau: float
    m: int = 0
    records: List[IterationRecord] = field(default_factory=list)
    last_primal: Optional[np.ndarray] = None
    rows_built_for: int = 0


def make_workspace(scenario: Scenario, config: Optional[DcaConfig] = None) -> DcaWorkspace:
    config = config or DcaConfig()
    program, vmap = build_base_problem(scenario)
    add_slack_columns(program, vmap, scenario, tau=config.tau0)
    anchors = [initialize_trajectory(scenario, config.init_policy)]
    return DcaWorkspace(
        scenario=scenario,
        config=config,
        program=program,
        vmap=vmap,
        anchors=anchors,
        base_ineq_count=len(program.inequalities),
        slack_cols=vmap.slack_indices_array(),
        tau=config.tau0,
    )


def _least_variance_axis(anchor: Trajectory, i: int, j: int) -> int:
    rel = anchor.states[i, :, :3] - anchor.states[j, :, :3]
    return int(np.argmin(rel.var(axis=0)))


def _perturbed_for_pair(anchor: Trajectory, i: int, j: int, k: int, d: float) -> Trajectory:
    """Split a coincident pair deterministically before differentiating.

    The pair is pushed apart by 1e-3 * d along the axis on which its
    relative motion varies least over the horizon (ties resolved toward x).
    Vehicle i moves in the positive direction, j in the negative one.
    """
    axis = _least_variance_axis(anchor, i, j)
    offset = 0.5e-3 * d
    states = anchor.states.copy()
    states[i, k, axis] += offset
    states[j, k, axis] -= offset
    return Trajectory(states=states, inputs=anchor.inputs)


def _add_rows_for_anchor(ws: DcaWorkspace, anchor: Trajectory) -> None:
    d = ws.scenario.safety_distance
    degen_tol = 1e-9 * d
    for pair in ws.scenario.pairs():
        i, j = pair
        gaps = np.linalg.norm(anchor.states[i, :, :3] - anchor.states[j, :, :3], axis=1)
        for k in range(ws.scenario.horizon):
            if gaps[k] <= degen_tol:
                source = _perturbed_for_pair(anchor, i, j, k, d)
            else:
                source = anchor
            add_linearized_collision_row(ws.program, ws.vmap, source, pair, k)


def _sync_rows(ws: DcaWorkspace) -> None:
    if ws.config.anchor_policy == "accumulate_all":
        for anchor in ws.anchors[ws.rows_built_for:]:
            _add_rows_for_anchor(ws, anchor)
        ws.rows_built_for = len(ws.anchors)
    else:
        del ws.program.inequalities[ws.base_ineq_count:]
        for anchor in ws.anchors[-ws.config.keep_last:]:
            _add_rows_for_anchor(ws, anchor)
        ws.rows_built_for = len(ws.anchors)


def dca_iterate(ws: DcaWorkspace) -> IterationRecord:
    """Run one outer iteration; the workspace is updated in place.

    The anchor set gains exactly one trajectory (the subproblem solution)
    and tau escalates afterwards, so the record carries the tau that the
    subproblem actually used.
    """
    _sync_rows(ws)
    set_slack_weight(ws.program, ws.vmap, ws.tau)
    sol = solve(ws.program, ws.config.solver)

    tau_used = ws.tau
    if sol.status is not SolverStatus.OPTIMAL or sol.primal is None:
        record = IterationRecord(
            m=ws.m, objective_f0=float("nan"), penalty_term=float("nan"),
            max_slack=float("nan"), delta=float("nan"), tau=tau_used,
            subproblem_status=sol.status.value)
        ws.records.append(record)
        ws.m += 1
        return record

    x = sol.primal
    if ws.slack_cols.size:
        slack_sum = float(np.maximum(x[ws.slack_cols], 0.0).sum())
        max_slack = float(x[ws.slack_cols].max())
        max_slack = max(max_slack, 0.0)
    else:
        slack_sum = 0.0
        max_slack = 0.0
    penalty = tau_used * slack_sum
    f0 = sol.objective - penalty

    if ws.records and not math.isnan(ws.records[-1].objective_f0):
        prev = ws.records[-1]
        delta = (f0 + penalty) - (prev.objective_f0 + prev.penalty_term)
    else:
        delta = float("inf")

    record = IterationRecord(
        m=ws.m, objective_f0=f0, penalty_term=penalty, max_slack=max_slack,
        delta=delta, tau=tau_used, subproblem_status=sol.status.value)
    ws.records.append(record)
    ws.anchors.append(ws.vmap.decode(x))
    ws.last_primal = x
    ws.tau = min(ws.config.mu * ws.tau, ws.config.tau_max)
    ws.m += 1
    return record


def plan_dca(scenario: Scenario, config: Optional[DcaConfig] = None) -> PlanResult:
    """Plan trajectories for a scenario with the penalty outer loop.

    Scenarios with a single vehicle have no separation constraints, so the
    convex base problem is solved once and returned as converged.

    The loop stops when tau has reached tau_max and the penalized objective
    has stabilized within epsilon, when the iteration budget runs out, or
    when a subproblem fails. The final status distinguishes a genuinely
    separated fleet from convergence onto residual slack by checking both
    the slack values and the actual pairwise distances.
    """
    config = config or DcaConfig()
    ws = make_workspace(scenario, config)
    has_pairs = scenario.n_vehicles >= 2

    status: Optional[PlanStatus] = None
    while status is None:
        record = dca_iterate(ws)
        if record.subproblem_status != SolverStatus.OPTIMAL.value:
            status = PlanStatus.SUBPROBLEM_FAILURE
        elif not has_pairs:
            status = PlanStatus.CONVERGED_FEASIBLE
        elif (record.tau == config.tau_max and math.isfinite(record.delta)
              and abs(record.delta) <= config.epsilon):
            status = PlanStatus.CONVERGED_FEASIBLE  # refined below
        elif ws.m >= config.max_iters:
            status = PlanStatus.ITERATION_LIMIT

    trajectory = ws.anchors[-1]
    if has_pairs:
        min_sep, _ = min_pairwise_distance(trajectory)
    else:
        min_sep = float("inf")

    if status is PlanStatus.CONVERGED_FEASIBLE and has_pairs:
        final = ws.records[-1]
        d = scenario.safety_distance
        if not (final.max_slack <= config.slack_tol
                and min_sep >= d - 10.0 * config.slack_tol):
            status = PlanStatus.CONVERGED_INFEASIBLE_SLACK

    return PlanResult(trajectory=trajectory, status=status,
                      log=list(ws.records), min_separation=min_sep)


def write_iteration_log(records: List[IterationRecord], path) -> None:
    """CSV dump of the outer-loop log, one row per iteration."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "objective_f0", "penalty_term", "max_slack",
                         "delta", "tau", "status"])
        for rec in records:
            writer.writerow([rec.m, repr(rec.objective_f0), repr(rec.penalty_term),
                             repr(rec.max_slack), repr(rec.delta), repr(rec.tau),
                             rec.subproblem_status])
