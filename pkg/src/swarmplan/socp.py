"""Conic program intermediate representation and the base planning problem.

The IR is a flat variable vector with a dense linear objective, sparse
equality and inequality rows, second-order cones, and a nonnegative set.
A cone record means

    || x[vector_indices] + vector_shift ||_2  <=  x[t_index] + t_const,

with ``t_index = None`` for a constant bound (velocity and force caps) and a
nonzero shift for affine offsets (distance to a fixed goal point). This keeps
the decision vector at exactly the planning variables, with no mirror
variables for shifted or capped norms.

``build_base_problem`` lays out, per vehicle i and step k, the block

    [p(3), v(3), u(3), t_fuel, t_goal]      (11 variables)

and adds dynamics, boundary conditions, and the velocity/force cones. The
objective is sum_i sum_k (force_weight * t_fuel + goal_weight_slope * k *
t_goal) with k counted from 1. Collision handling is layered on top by
``add_slack_columns`` and ``add_linearized_collision_row``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO, Optional, Sequence, Tuple

import numpy as np

from .dynamics import INPUT_DIM, STATE_DIM, Trajectory, discretize
from .scenario import Scenario

__all__ = [
    "ProgramError",
    "DegenerateAnchorError",
    "SecondOrderCone",
    "ConicProgram",
    "VariableMap",
    "build_base_problem",
    "add_slack_columns",
    "set_slack_weight",
    "add_linearized_collision_row",
]

_VARS_PER_STEP = 11  # 6 state + 3 input + 2 epigraph


class ProgramError(ValueError):
    """Structurally invalid program or misuse of the builder API."""


class DegenerateAnchorError(ProgramError):
    """Anchor positions coincide; the separation gradient is undefined.

    Callers must perturb the anchor before asking for a linearized row.
    """


@dataclass(frozen=True)
class SecondOrderCone:
    """`||x[vector_indices] + vector_shift|| <= x[t_index] + t_const`."""

    t_index: Optional[int]
    vector_indices: np.ndarray
    t_const: float = 0.0
    vector_shift: Optional[np.ndarray] = None

    def __post_init__(self):
        idx = np.asarray(self.vector_indices, dtype=int)
        if idx.ndim != 1 or idx.size == 0:
            raise ProgramError(f"cone vector must be a non-empty 1-d index list, got {idx.shape}")
        object.__setattr__(self, "vector_indices", idx)
        if self.vector_shift is not None:
            shift = np.asarray(self.vector_shift, dtype=float)
            if shift.shape != idx.shape:
                raise ProgramError("vector_shift must match vector_indices in length")
            object.__setattr__(self, "vector_shift", shift)

    def shift(self) -> np.ndarray:
        if self.vector_shift is None:
            return np.zeros(self.vector_indices.size)
        return self.vector_shift


class ConicProgram:
    """Mutable builder for a sparse conic program.

    Rows are stored as (indices, coefficients, rhs) triples; equalities mean
    a.x == rhs and inequalities a.x <= rhs. Nonnegativity is a plain index
    set, not duplicated as rows.
    """

    def __init__(self, num_vars: int = 0):
        self.num_vars = int(num_vars)
        self.objective = np.zeros(self.num_vars)
        self.equalities: list = []
        self.inequalities: list = []
        self.cones: list = []
        self.nonneg_vars: list = []

    def add_vars(self, count: int) -> int:
        """Append ``count`` variables with zero objective; returns the first index."""
        if count < 1:
            raise ProgramError(f"count must be >= 1, got {count}")
        start = self.num_vars
        self.num_vars += count
        self.objective = np.concatenate([self.objective, np.zeros(count)])
        return start

    def _row(self, indices, coeffs, rhs) -> tuple:
        idx = np.asarray(indices, dtype=int)
        coef = np.asarray(coeffs, dtype=float)
        if idx.shape != coef.shape or idx.ndim != 1 or idx.size == 0:
            raise ProgramError(f"bad row shapes {idx.shape} vs {coef.shape}")
        return (idx, coef, float(rhs))

    def add_equality(self, indices, coeffs, rhs) -> None:
        self.equalities.append(self._row(indices, coeffs, rhs))

    def add_inequality(self, indices, coeffs, rhs) -> None:
        self.inequalities.append(self._row(indices, coeffs, rhs))

    def add_cone(self, t_index, vector_indices, t_const=0.0, vector_shift=None) -> None:
        self.cones.append(SecondOrderCone(
            t_index=t_index, vector_indices=vector_indices,
            t_const=float(t_const), vector_shift=vector_shift))

    def mark_nonneg(self, index: int) -> None:
        self.nonneg_vars.append(int(index))

    def validate(self) -> None:
        """Check index bounds and finiteness; raises ProgramError."""
        n = self.num_vars
        if self.objective.shape != (n,):
            raise ProgramError("objective length does not match num_vars")
        if not np.all(np.isfinite(self.objective)):
            raise ProgramError("objective has non-finite entries")
        for kind, rows in (("equality", self.equalities), ("inequality", self.inequalities)):
            for pos, (idx, coef, rhs) in enumerate(rows):
                if idx.size and (idx.min() < 0 or idx.max() >= n):
                    raise ProgramError(f"{kind} row {pos} references variable out of range")
                if not (np.all(np.isfinite(coef)) and np.isfinite(rhs)):
                    raise ProgramError(f"{kind} row {pos} has non-finite data")
        for pos, cone in enumerate(self.cones):
            if cone.t_index is not None and not (0 <= cone.t_index < n):
                raise ProgramError(f"cone {pos} bound index out of range")
            if cone.vector_indices.min() < 0 or cone.vector_indices.max() >= n:
                raise ProgramError(f"cone {pos} vector index out of range")
            if cone.t_index is not None and cone.t_index in set(cone.vector_indices.tolist()):
                raise ProgramError(f"cone {pos} bound appears inside its own vector")
            if not np.isfinite(cone.t_const) or not np.all(np.isfinite(cone.shift())):
                raise ProgramError(f"cone {pos} has non-finite data")
        for v in self.nonneg_vars:
            if not (0 <= v < n):
                raise ProgramError(f"nonnegative variable {v} out of range")

    def copy(self) -> "ConicProgram":
        dup = ConicProgram(0)
        dup.num_vars = self.num_vars
        dup.objective = self.objective.copy()
        dup.equalities = list(self.equalities)
        dup.inequalities = list(self.inequalities)
        dup.cones = list(self.cones)
        dup.nonneg_vars = list(self.nonneg_vars)
        return dup

    def dump(self, stream: IO) -> None:
        """Line-oriented debug listing of variables, rows, and cones."""
        stream.write(f"conic program: {self.num_vars} vars, "
                     f"{len(self.equalities)} eq, {len(self.inequalities)} ineq, "
                     f"{len(self.cones)} cones, {len(self.nonneg_vars)} nonneg\n")
        nonneg = set(self.nonneg_vars)
        for v in range(self.num_vars):
            flag = " >=0" if v in nonneg else ""
            if self.objective[v] != 0.0 or flag:
                stream.write(f"var x{v}: obj={self.objective[v]:g}{flag}\n")
        for label, rows, op in (("eq", self.equalities, "=="), ("ineq", self.inequalities, "<=")):
            for pos, (idx, coef, rhs) in enumerate(rows):
                terms = " + ".join(f"{c:g}*x{i}" for i, c in zip(idx, coef))
                stream.write(f"{label}[{pos}]: {terms} {op} {rhs:g}\n")
        for pos, cone in enumerate(self.cones):
            vec = ", ".join(
                f"x{i}{f'{s:+g}' if s else ''}" for i, s in zip(cone.vector_indices, cone.shift()))
            bound = f"x{cone.t_index}" if cone.t_index is not None else ""
            if cone.t_const or cone.t_index is None:
                bound = f"{bound}{'+' if bound else ''}{cone.t_const:g}"
            stream.write(f"cone[{pos}]: ||({vec})|| <= {bound}\n")


@dataclass
class VariableMap:
    """Index bookkeeping between the flat variable vector and trajectories.

    The per-step layout is position (3), velocity (3), input (3), fuel
    epigraph, goal epigraph. Slack columns, when present, sit after all
    per-step blocks, ordered by pair (i < j) and then by step.
    """

    n_vehicles: int
    horizon: int
    safety_distance: float
    slack_index: dict = field(default_factory=dict)

    def _base(self, vehicle: int, k: int) -> int:
        if not (0 <= vehicle < self.n_vehicles and 0 <= k < self.horizon):
            raise ProgramError(f"(vehicle={vehicle}, k={k}) out of range")
        return (vehicle * self.horizon + k) * _VARS_PER_STEP

    def position_indices(self, vehicle: int, k: int) -> np.ndarray:
        b = self._base(vehicle, k)
        return np.arange(b, b + 3)

    def velocity_indices(self, vehicle: int, k: int) -> np.ndarray:
        b = self._base(vehicle, k)
        return np.arange(b + 3, b + 6)

    def state_indices(self, vehicle: int, k: int) -> np.ndarray:
        b = self._base(vehicle, k)
        return np.arange(b, b + STATE_DIM)

    def input_indices(self, vehicle: int, k: int) -> np.ndarray:
        b = self._base(vehicle, k)
        return np.arange(b + STATE_DIM, b + STATE_DIM + INPUT_DIM)

    def fuel_epigraph_index(self, vehicle: int, k: int) -> int:
        return self._base(vehicle, k) + 9

    def goal_epigraph_index(self, vehicle: int, k: int) -> int:
        return self._base(vehicle, k) + 10

    @property
    def num_core_vars(self) -> int:
        return self.n_vehicles * self.horizon * _VARS_PER_STEP

    def slack_indices_array(self) -> np.ndarray:
        """All slack column indices in (pair, step) order."""
        keys = sorted(self.slack_index)
        return np.array([self.slack_index[key] for key in keys], dtype=int)

    def decode(self, primal: np.ndarray) -> Trajectory:
        """Extract the trajectory part of a primal vector."""
        x = np.asarray(primal, dtype=float)
        if x.ndim != 1 or x.size < self.num_core_vars:
            raise ProgramError(f"primal of length {x.size} is too short for this map")
        states = np.empty((self.n_vehicles, self.horizon, STATE_DIM))
        inputs = np.empty((self.n_vehicles, self.horizon, INPUT_DIM))
        for i in range(self.n_vehicles):
            for k in range(self.horizon):
                b = self._base(i, k)
                states[i, k] = x[b:b + STATE_DIM]
                inputs[i, k] = x[b + STATE_DIM:b + STATE_DIM + INPUT_DIM]
        return Trajectory(states=states, inputs=inputs)

    def encode(self, trajectory: Trajectory, scenario: Scenario,
               num_vars: Optional[int] = None) -> np.ndarray:
        """Embed a trajectory as a primal vector with tight epigraph values.

        Intended for feeding hand-built trajectories to residual checks.
        Slack columns, when present, are filled with the violation
        max(0, d - separation) of the corresponding pair and step.
        """
        if trajectory.n_vehicles != self.n_vehicles or trajectory.horizon != self.horizon:
            raise ProgramError("trajectory dimensions do not match this map")
        total = num_vars if num_vars is not None else (
            self.num_core_vars + len(self.slack_index))
        x = np.zeros(total)
        for i in range(self.n_vehicles):
            goal = scenario.vehicles[i].goal_position
            for k in range(self.horizon):
                b = self._base(i, k)
                x[b:b + STATE_DIM] = trajectory.states[i, k]
                x[b + STATE_DIM:b + STATE_DIM + INPUT_DIM] = trajectory.inputs[i, k]
                x[b + 9] = np.linalg.norm(trajectory.inputs[i, k])
                x[b + 10] = np.linalg.norm(trajectory.states[i, k, :3] - goal)
        d = self.safety_distance
        for (i, j, k), col in self.slack_index.items():
            gap = np.linalg.norm(trajectory.states[i, k, :3] - trajectory.states[j, k, :3])
            x[col] = max(0.0, d - gap)
        return x


def build_base_problem(scenario: Scenario) -> Tuple[ConicProgram, VariableMap]:
    """Assemble the collision-free planning problem for a scenario.

    Per vehicle: dynamics equalities linking consecutive steps, pinned start
    position/velocity at the first step, pinned goal position/velocity/force
    at the last step, velocity and force norm caps at every step, and the
    two epigraph cones feeding the objective. Arena bounds, when present,
    become per-axis position inequalities.
    """
    n, horizon = scenario.n_vehicles, scenario.horizon
    program = ConicProgram(num_vars=n * horizon * _VARS_PER_STEP)
    vmap = VariableMap(n_vehicles=n, horizon=horizon,
                       safety_distance=scenario.safety_distance)

    rho = scenario.force_weight
    slope = scenario.goal_weight_slope
    for i, veh in enumerate(scenario.vehicles):
        model = discretize(veh.mass, scenario.dt)
        for k in range(horizon):
            program.objective[vmap.fuel_epigraph_index(i, k)] = rho
            program.objective[vmap.goal_epigraph_index(i, k)] = slope * (k + 1)

        # Dynamics: x[k+1] - A_hat x[k] - B_hat u[k] = 0, row by state entry.
        for k in range(horizon - 1):
            cur = vmap.state_indices(i, k)
            nxt = vmap.state_indices(i, k + 1)
            uin = vmap.input_indices(i, k)
            for r in range(STATE_DIM):
                idx = [nxt[r]]
                coef = [1.0]
                for c in np.nonzero(model.a_hat[r])[0]:
                    idx.append(cur[c]); coef.append(-model.a_hat[r, c])
                for c in np.nonzero(model.b_hat[r])[0]:
                    idx.append(uin[c]); coef.append(-model.b_hat[r, c])
                program.add_equality(idx, coef, 0.0)

        first = vmap.state_indices(i, 0)
        for r in range(3):
            program.add_equality([first[r]], [1.0], veh.start_position[r])
            program.add_equality([first[3 + r]], [1.0], veh.start_velocity[r])
        last = vmap.state_indices(i, horizon - 1)
        last_u = vmap.input_indices(i, horizon - 1)
        for r in range(3):
            program.add_equality([last[r]], [1.0], veh.goal_position[r])
            program.add_equality([last[3 + r]], [1.0], veh.goal_velocity[r])
            program.add_equality([last_u[r]], [1.0], veh.goal_force[r])

        for k in range(horizon):
            program.add_cone(vmap.fuel_epigraph_index(i, k), vmap.input_indices(i, k))
            program.add_cone(vmap.goal_epigraph_index(i, k), vmap.position_indices(i, k),
                             vector_shift=-veh.goal_position)
            program.add_cone(None, vmap.velocity_indices(i, k), t_const=veh.v_max)
            program.add_cone(None, vmap.input_indices(i, k), t_const=veh.f_max)

        if scenario.arena_bounds is not None:
            lows = scenario.arena_bounds.lows()
            highs = scenario.arena_bounds.highs()
            for k in range(horizon):
                pos = vmap.position_indices(i, k)
                for axis in range(3):
                    program.add_inequality([pos[axis]], [1.0], highs[axis])
                    program.add_inequality([pos[axis]], [-1.0], -lows[axis])

    program.validate()
    return program, vmap


def add_slack_columns(program: ConicProgram, vmap: VariableMap,
                      scenario: Scenario, tau: float = 0.0) -> Tuple[ConicProgram, VariableMap]:
    """Append one nonnegative slack per vehicle pair and step.

    The slacks relax linearized collision rows and enter the objective with
    weight ``tau`` (adjustable later via set_slack_weight). Calling this
    twice on the same map is an error.
    """
    if vmap.slack_index:
        raise ProgramError("slack columns already added")
    if scenario.n_vehicles != vmap.n_vehicles or scenario.horizon != vmap.horizon:
        raise ProgramError("scenario dimensions do not match the variable map")
    for i, j in scenario.pairs():
        for k in range(scenario.horizon):
            col = program.add_vars(1)
            program.mark_nonneg(col)
            program.objective[col] = tau
            vmap.slack_index[(i, j, k)] = col
    return program, vmap


def set_slack_weight(program: ConicProgram, vmap: VariableMap, tau: float) -> None:
    """Point all slack objective coefficients at the penalty weight ``tau``."""
    if not np.isfinite(tau) or tau < 0.0:
        raise ProgramError(f"tau must be finite and >= 0, got {tau!r}")
    cols = vmap.slack_indices_array()
    if cols.size:
        program.objective[cols] = tau


def add_linearized_collision_row(program: ConicProgram, vmap: VariableMap,
                                 anchor: Trajectory, pair: Tuple[int, int], k: int) -> None:
    """Append the separation constraint linearized at an anchor trajectory.

    With e the unit vector from vehicle j to vehicle i at the anchor, the
    row is

        -e . p_i + e . p_j - s_{ijk}  <=  -d,

    i.e. d minus the linearized separation must not exceed the pair slack.
    Because the true separation is convex, the linearization never
    overestimates it, so feasible points of the true constraint always
    satisfy the row (with the same slack).
    """
    i, j = pair
    if not (0 <= i < vmap.n_vehicles and 0 <= j < vmap.n_vehicles and i != j):
        raise ProgramError(f"bad pair {pair}")
    if anchor.n_vehicles != vmap.n_vehicles or anchor.horizon != vmap.horizon:
        raise ProgramError("anchor dimensions do not match the variable map")
    key = (min(i, j), max(i, j), k)
    if key not in vmap.slack_index:
        raise ProgramError("slack columns must be added before collision rows")
    diff = anchor.states[i, k, :3] - anchor.states[j, k, :3]
    gap = float(np.linalg.norm(diff))
    d = vmap.safety_distance
    if gap <= 1e-9 * d:
        raise DegenerateAnchorError(
            f"anchor positions for pair {pair} at step {k} coincide (gap {gap:g})")
    e = diff / gap
    idx = np.concatenate([vmap.position_indices(i, k), vmap.position_indices(j, k),
                          [vmap.slack_index[key]]])
    coef = np.concatenate([-e, e, [-1.0]])
    program.add_inequality(idx, coef, -d)
