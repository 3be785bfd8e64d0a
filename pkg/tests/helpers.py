"""Shared scenario factories for the test suite."""

import numpy as np

from swarmplan import Scenario, VehicleSpec


def make_vehicle(start, goal, start_velocity=(0, 0, 0), goal_velocity=(0, 0, 0),
                 mass=1.0, v_max=10.0, f_max=10.0, goal_force=(0, 0, 0)):
    return VehicleSpec(
        mass=mass,
        start_position=tuple(start),
        start_velocity=tuple(start_velocity),
        goal_position=tuple(goal),
        goal_velocity=tuple(goal_velocity),
        goal_force=tuple(goal_force),
        v_max=v_max,
        f_max=f_max,
    )


def make_scenario(vehicles, horizon=10, dt=1.0, safety_distance=5.0,
                  force_weight=1.0, goal_weight_slope=0.05, arena_bounds=None):
    return Scenario(
        vehicles=tuple(vehicles),
        horizon=horizon,
        dt=dt,
        safety_distance=safety_distance,
        force_weight=force_weight,
        goal_weight_slope=goal_weight_slope,
        arena_bounds=arena_bounds,
    )


def single_vehicle_scenario(horizon=5, start=(0, 0, 0), goal=(8, 0, 0)):
    return make_scenario([make_vehicle(start, goal)], horizon=horizon)


def far_apart_scenario(horizon=3, gap=100.0):
    """Two vehicles far enough that no collision row ever binds."""
    a = make_vehicle((0, 0, 0), (5, 0, 0))
    b = make_vehicle((0, gap, 0), (5, gap, 0))
    return make_scenario([a, b], horizon=horizon)


def head_on_scenario(horizon=11, offset=10.0):
    """Two vehicles swapping places along the x axis; odd horizons put a
    step exactly at the crossing point."""
    a = make_vehicle((-offset, 0, 0), (offset, 0, 0))
    b = make_vehicle((offset, 0, 0), (-offset, 0, 0))
    return make_scenario([a, b], horizon=horizon)


def crossing_pair_vehicles():
    """Opposed travel with a 2-unit lateral gap: a dodge is mandatory."""
    return [
        make_vehicle((-9, 1, 0), (9, 1, 0)),
        make_vehicle((9, -1, 0), (-9, -1, 0)),
    ]


def crossing_pair_scenario(horizon=10):
    return make_scenario(crossing_pair_vehicles(), horizon=horizon)


def bystander_trio_scenario(horizon=10):
    """The crossing pair plus a distant third lane that never binds."""
    vehicles = crossing_pair_vehicles() + [make_vehicle((-9, 15, 0), (9, 15, 0))]
    return make_scenario(vehicles, horizon=horizon)


def coasting_lanes_scenario():
    """Two constant-velocity lanes with a 4.1-unit lateral gap, K=5.

    The coasting straight lines are jointly optimal (zero fuel) and keep a
    minimum distance of sqrt(3^2 + 4.1^2) ~ 5.08, which clears a 5-unit
    separation sphere while no single coordinate gap reaches 5 at the
    tightest step.
    """
    a = make_vehicle((-9, 0, 0), (9, 0, 0),
                     start_velocity=(4.5, 0, 0), goal_velocity=(4.5, 0, 0))
    b = make_vehicle((6, 4.1, 0), (-12, 4.1, 0),
                     start_velocity=(-4.5, 0, 0), goal_velocity=(-4.5, 0, 0))
    return make_scenario([a, b], horizon=5)


def pinned_crossing_scenario():
    """Two vehicles, K=3, boundary conditions pinning every position.

    With three steps the trajectory has no freedom: step 1 follows from the
    start velocity and step 2 is the goal. The mid-step lateral gap is 6,
    so the instance is feasible for a 5-unit separation requirement.
    """
    a = make_vehicle((-10, 3, 0), (10, 3, 0),
                     start_velocity=(10, 0, 0), goal_velocity=(10, 0, 0))
    b = make_vehicle((10, -3, 0), (-10, -3, 0),
                     start_velocity=(-10, 0, 0), goal_velocity=(-10, 0, 0))
    return make_scenario([a, b], horizon=3)


def perpendicular_crossing_scenario(horizon=5):
    """Two vehicles crossing at right angles through a shared midpoint.

    Both want to pass near the origin around the middle step, so separation
    has to be fought for rather than inherited from the boundary data.
    """
    a = make_vehicle((-8, 0, 0), (8, 0, 0))
    b = make_vehicle((0, -8, 0), (0, 8, 0))
    return make_scenario([a, b], horizon=horizon)


def scenario_doc(n_vehicles=1, horizon=5, **overrides):
    """Plain-dict scenario document for load_scenario tests."""
    vehicles = []
    for i in range(n_vehicles):
        vehicles.append({
            "mass": 1.0,
            "start_position": [10.0 * i, 0.0, 0.0],
            "start_velocity": [0.0, 0.0, 0.0],
            "goal_position": [10.0 * i, 20.0, 0.0],
            "goal_velocity": [0.0, 0.0, 0.0],
            "goal_force": [0.0, 0.0, 0.0],
            "v_max": 10.0,
            "f_max": 10.0,
        })
    doc = {
        "vehicles": vehicles,
        "horizon": horizon,
        "dt": 1.0,
        "safety_distance": 5.0,
        "force_weight": 1.0,
        "goal_weight_slope": 0.05,
    }
    doc.update(overrides)
    return doc


def straight_line_positions(start, goal, horizon):
    """Evenly spaced positions from start to goal, one row per step."""
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    alpha = np.linspace(0.0, 1.0, horizon)[:, None]
    return (1.0 - alpha) * start + alpha * goal
