"""Independent feasibility and objective checks for planned trajectories.

Everything here works directly on trajectory arrays and scenario data,
without touching the optimization layer, so it can catch bugs in the
program builders as well as in the planners.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np

from .dynamics import Trajectory, TrajectoryFormatError, dynamics_residual
from .scenario import Scenario

__all__ = [
    "FeasibilityReport",
    "check_feasibility",
    "evaluate_objective",
    "min_pairwise_distance",
    "write_distance_csv",
]


@dataclass(frozen=True)
class FeasibilityReport:
    """Outcome of an independent trajectory check.

    Defects are worst-case infinity norms (0 is perfect); margins are
    signed distances to the caps (negative means violated). The separation
    argmin uses 0-based vehicle ids and a 1-based step, matching the CSV
    conventions.
    """

    feasible: bool
    tolerance: float
    dynamics_defect: float
    boundary_defect: float
    velocity_margin: float
    force_margin: float
    min_separation: float
    min_separation_at: Optional[Tuple[int, int, int]]

    def to_json(self, indent: int = 2) -> str:
        doc = asdict(self)
        if doc["min_separation"] == float("inf"):
            doc["min_separation"] = None
        if doc["min_separation_at"] is not None:
            doc["min_separation_at"] = list(doc["min_separation_at"])
        return json.dumps(doc, indent=indent)


def min_pairwise_distance(trajectory: Trajectory) -> Tuple[float, Tuple[int, int, int]]:
    """Smallest inter-vehicle distance and its (i, j, step) location.

    The step in the returned triple is 1-based. Raises for single-vehicle
    trajectories, where no pair exists.
    """
    n, horizon = trajectory.n_vehicles, trajectory.horizon
    if n < 2:
        raise TrajectoryFormatError("pairwise distance requires at least two vehicles")
    best = float("inf")
    where = (0, 1, 1)
    pos = trajectory.states[:, :, :3]
    for i in range(n):
        for j in range(i + 1, n):
            gaps = np.linalg.norm(pos[i] - pos[j], axis=1)
            k = int(np.argmin(gaps))
            if gaps[k] < best:
                best = float(gaps[k])
                where = (i, j, k + 1)
    return best, where


def _boundary_defect(trajectory: Trajectory, scenario: Scenario) -> float:
    worst = 0.0
    for i, veh in enumerate(scenario.vehicles):
        first = trajectory.states[i, 0]
        last = trajectory.states[i, -1]
        worst = max(worst, float(np.abs(first[:3] - veh.start_position).max()))
        worst = max(worst, float(np.abs(first[3:] - veh.start_velocity).max()))
        worst = max(worst, float(np.abs(last[:3] - veh.goal_position).max()))
        worst = max(worst, float(np.abs(last[3:] - veh.goal_velocity).max()))
        worst = max(worst, float(np.abs(trajectory.inputs[i, -1] - veh.goal_force).max()))
    return worst


def check_feasibility(scenario: Scenario, trajectory: Trajectory,
                      tol: float = 1e-4) -> FeasibilityReport:
    """Check dynamics, boundary conditions, caps, and pairwise separation.

    ``feasible`` holds when every defect is within ``tol``, both margins
    are above ``-tol``, and (for two or more vehicles) the minimum
    separation is at least the safety distance minus ``tol``.
    """
    if trajectory.n_vehicles != scenario.n_vehicles or trajectory.horizon != scenario.horizon:
        raise TrajectoryFormatError(
            f"trajectory ({trajectory.n_vehicles} vehicles, {trajectory.horizon} steps) does not "
            f"match scenario ({scenario.n_vehicles}, {scenario.horizon})")
    dyn = dynamics_residual(trajectory, scenario)
    boundary = _boundary_defect(trajectory, scenario)
    vel_margin = float("inf")
    force_margin = float("inf")
    for i, veh in enumerate(scenario.vehicles):
        speeds = np.linalg.norm(trajectory.states[i, :, 3:], axis=1)
        forces = np.linalg.norm(trajectory.inputs[i], axis=1)
        vel_margin = min(vel_margin, float(veh.v_max - speeds.max()))
        force_margin = min(force_margin, float(veh.f_max - forces.max()))
    if scenario.n_vehicles >= 2:
        min_sep, where = min_pairwise_distance(trajectory)
        sep_ok = min_sep >= scenario.safety_distance - tol
    else:
        min_sep, where = float("inf"), None
        sep_ok = True
    feasible = (dyn <= tol and boundary <= tol
                and vel_margin >= -tol and force_margin >= -tol and sep_ok)
    return FeasibilityReport(
        feasible=feasible,
        tolerance=tol,
        dynamics_defect=dyn,
        boundary_defect=boundary,
        velocity_margin=vel_margin,
        force_margin=force_margin,
        min_separation=min_sep,
        min_separation_at=where,
    )


def evaluate_objective(scenario: Scenario, trajectory: Trajectory) -> dict:
    """Objective terms of a trajectory: fuel, goal attraction, and their sum.

    Fuel is force_weight times the sum of input norms; the goal term weights
    the distance to each vehicle's goal by goal_weight_slope times the
    1-based step index, rewarding early arrival.
    """
    if trajectory.n_vehicles != scenario.n_vehicles or trajectory.horizon != scenario.horizon:
        raise TrajectoryFormatError("trajectory dimensions do not match the scenario")
    fuel = 0.0
    goal = 0.0
    steps = np.arange(1, scenario.horizon + 1)
    for i, veh in enumerate(scenario.vehicles):
        fuel += scenario.force_weight * float(
            np.linalg.norm(trajectory.inputs[i], axis=1).sum())
        dists = np.linalg.norm(trajectory.states[i, :, :3] - veh.goal_position, axis=1)
        goal += scenario.goal_weight_slope * float((steps * dists).sum())
    return {"fuel": fuel, "goal": goal, "combined": fuel + goal}


def write_distance_csv(trajectory: Trajectory, path) -> None:
    """Per-step pairwise distances, one row per (step, pair); steps 1-based."""
    if trajectory.n_vehicles < 2:
        raise TrajectoryFormatError("pairwise distances require at least two vehicles")
    pos = trajectory.states[:, :, :3]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "i", "j", "distance"])
        for k in range(trajectory.horizon):
            for i in range(trajectory.n_vehicles):
                for j in range(i + 1, trajectory.n_vehicles):
                    gap = float(np.linalg.norm(pos[i, k] - pos[j, k]))
                    writer.writerow([k + 1, i, j, repr(gap)])
