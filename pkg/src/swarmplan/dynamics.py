"""Discrete double-integrator model and trajectory containers.

State is (position, velocity) in R^6, input is a force in R^3. The discrete
update is the forward-Euler map

    x[k+1] = A_hat x[k] + B_hat u[k],
    A_hat = I + dt * [[0, I], [0, 0]],  B_hat = (dt / m) * [[0], [I]],

so position picks up dt * velocity and velocity picks up (dt / m) * force.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Union

import numpy as np

from .scenario import Scenario

__all__ = [
    "STATE_DIM",
    "INPUT_DIM",
    "DiscreteModel",
    "discretize",
    "propagate",
    "rollout",
    "Trajectory",
    "TrajectoryFormatError",
    "dynamics_residual",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

STATE_DIM = 6
INPUT_DIM = 3


class TrajectoryFormatError(ValueError):
    """Trajectory arrays or CSV rows with the wrong shape or missing entries."""


@dataclass(frozen=True)
class DiscreteModel:
    """Per-vehicle discrete update matrices."""

    a_hat: np.ndarray
    b_hat: np.ndarray
    dt: float
    mass: float

    def __post_init__(self):
        a = np.asarray(self.a_hat, dtype=float)
        b = np.asarray(self.b_hat, dtype=float)
        if a.shape != (STATE_DIM, STATE_DIM) or b.shape != (STATE_DIM, INPUT_DIM):
            raise TrajectoryFormatError(
                f"model shapes {a.shape}, {b.shape} do not match ({STATE_DIM},{STATE_DIM}), "
                f"({STATE_DIM},{INPUT_DIM})")
        a = a.copy(); a.setflags(write=False)
        b = b.copy(); b.setflags(write=False)
        object.__setattr__(self, "a_hat", a)
        object.__setattr__(self, "b_hat", b)


def discretize(mass: float, dt: float) -> DiscreteModel:
    """Build the Euler-discretized double integrator for one vehicle."""
    if not (mass > 0.0 and np.isfinite(mass)):
        raise ValueError(f"mass must be positive and finite, got {mass!r}")
    if not (dt > 0.0 and np.isfinite(dt)):
        raise ValueError(f"dt must be positive and finite, got {dt!r}")
    a_hat = np.eye(STATE_DIM)
    a_hat[0, 3] = a_hat[1, 4] = a_hat[2, 5] = dt
    b_hat = np.zeros((STATE_DIM, INPUT_DIM))
    b_hat[3, 0] = b_hat[4, 1] = b_hat[5, 2] = dt / mass
    return DiscreteModel(a_hat=a_hat, b_hat=b_hat, dt=float(dt), mass=float(mass))


def propagate(state, control, model: DiscreteModel) -> np.ndarray:
    """One step of the discrete update."""
    x = np.asarray(state, dtype=float)
    u = np.asarray(control, dtype=float)
    if x.shape != (STATE_DIM,) or u.shape != (INPUT_DIM,):
        raise TrajectoryFormatError(f"state/control shapes {x.shape}, {u.shape} are invalid")
    return model.a_hat @ x + model.b_hat @ u


def rollout(initial, inputs, model: DiscreteModel) -> np.ndarray:
    """Propagate an input sequence; returns the (K, 6) state sequence.

    ``inputs`` has shape (K-1, 3); the returned sequence includes the
    initial state as row 0.
    """
    u = np.asarray(inputs, dtype=float)
    if u.ndim != 2 or u.shape[1] != INPUT_DIM:
        raise TrajectoryFormatError(f"inputs must be (K-1, 3), got {u.shape}")
    states = np.empty((u.shape[0] + 1, STATE_DIM))
    states[0] = np.asarray(initial, dtype=float)
    for k in range(u.shape[0]):
        states[k + 1] = propagate(states[k], u[k], model)
    return states


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States (N, K, 6) and inputs (N, K, 3) for N vehicles over K steps.

    The input at the final step does not propagate anywhere; it exists so
    the pinned goal force is part of the decision vector and the CSV dump.
    """

    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        u = np.asarray(self.inputs, dtype=float)
        if s.ndim != 3 or s.shape[2] != STATE_DIM:
            raise TrajectoryFormatError(f"states must be (N, K, 6), got {s.shape}")
        if u.shape != (s.shape[0], s.shape[1], INPUT_DIM):
            raise TrajectoryFormatError(
                f"inputs shape {u.shape} does not match states {s.shape}")
        if s.shape[1] < 2:
            raise TrajectoryFormatError(f"horizon must be >= 2, got {s.shape[1]}")
        s = s.copy(); s.setflags(write=False)
        u = u.copy(); u.setflags(write=False)
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "inputs", u)

    @property
    def n_vehicles(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1]

    def positions(self, vehicle: int) -> np.ndarray:
        return self.states[vehicle, :, :3]

    def velocities(self, vehicle: int) -> np.ndarray:
        return self.states[vehicle, :, 3:]


def dynamics_residual(trajectory: Trajectory, scenario: Scenario) -> float:
    """Worst dynamics defect over all vehicles and steps (infinity norm).

    Zero exactly when every transition obeys the per-vehicle discrete
    model built from the scenario masses and dt.
    """
    if trajectory.n_vehicles != scenario.n_vehicles or trajectory.horizon != scenario.horizon:
        raise TrajectoryFormatError(
            f"trajectory ({trajectory.n_vehicles} vehicles, {trajectory.horizon} steps) does not "
            f"match scenario ({scenario.n_vehicles}, {scenario.horizon})")
    worst = 0.0
    for i, veh in enumerate(scenario.vehicles):
        model = discretize(veh.mass, scenario.dt)
        pred = trajectory.states[i, :-1] @ model.a_hat.T + trajectory.inputs[i, :-1] @ model.b_hat.T
        defect = np.abs(trajectory.states[i, 1:] - pred)
        worst = max(worst, float(defect.max()))
    return worst


_CSV_HEADER = ["vehicle", "k", "x", "y", "z", "vx", "vy", "vz", "fx", "fy", "fz"]


def write_trajectory_csv(trajectory: Trajectory, path) -> None:
    """Dump a trajectory with one row per (vehicle, step); steps are 1-based."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for i in range(trajectory.n_vehicles):
            for k in range(trajectory.horizon):
                row = [i, k + 1]
                row.extend(repr(float(v)) for v in trajectory.states[i, k])
                row.extend(repr(float(v)) for v in trajectory.inputs[i, k])
                writer.writerow(row)


def read_trajectory_csv(path) -> Trajectory:
    """Inverse of write_trajectory_csv; rows may appear in any order."""
    entries = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _CSV_HEADER:
            raise TrajectoryFormatError(f"unexpected header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(_CSV_HEADER):
                raise TrajectoryFormatError(f"line {lineno}: expected {len(_CSV_HEADER)} fields")
            try:
                i = int(row[0]); k = int(row[1])
                values = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise TrajectoryFormatError(f"line {lineno}: {exc}") from None
            entries[(i, k)] = values
    if not entries:
        raise TrajectoryFormatError("no data rows")
    n = max(i for i, _ in entries) + 1
    horizon = max(k for _, k in entries)
    states = np.full((n, horizon, STATE_DIM), np.nan)
    inputs = np.full((n, horizon, INPUT_DIM), np.nan)
    for (i, k), values in entries.items():
        if i < 0 or k < 1:
            raise TrajectoryFormatError(f"vehicle {i}, step {k}: indices out of range")
        states[i, k - 1] = values[:STATE_DIM]
        inputs[i, k - 1] = values[STATE_DIM:]
    if np.isnan(states).any():
        missing = [(i, k + 1) for i in range(n) for k in range(horizon)
                   if np.isnan(states[i, k]).any()][:3]
        raise TrajectoryFormatError(f"missing rows for (vehicle, step) {missing}")
    return Trajectory(states=states, inputs=inputs)
