"""Problem instances: vehicle specs, scenario documents, benchmark generators.

A scenario bundles everything a planner needs: the fleet with start and goal
states, the time grid, the pairwise safety distance, and the objective
weights. Instances are immutable and validated eagerly, so a malformed
document fails at load time with a field path instead of deep inside a
solver.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Optional, Union

import numpy as np

__all__ = [
    "ScenarioError",
    "ScenarioParseError",
    "ScenarioValidationError",
    "GeometryError",
    "ArenaBounds",
    "VehicleSpec",
    "Scenario",
    "load_scenario",
    "scenario_to_dict",
    "dumps_scenario",
    "generate_benchmark",
]


class ScenarioError(ValueError):
    """Base class for scenario loading and validation failures."""


class ScenarioParseError(ScenarioError):
    """The document is not valid JSON or has the wrong top-level shape."""


class ScenarioValidationError(ScenarioError):
    """A field is present but violates an invariant.

    ``field_path`` names the offending entry, e.g. ``vehicles[2].mass``.
    """

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


class GeometryError(ScenarioError):
    """A benchmark generator cannot place vehicles at the safety distance."""


def _as_vec3(value, path: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,):
        raise ScenarioValidationError(path, f"expected 3 numbers, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ScenarioValidationError(path, "entries must be finite")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


def _positive(value, path: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ScenarioValidationError(path, f"expected a number, got {value!r}") from None
    if not math.isfinite(out) or out <= 0.0:
        raise ScenarioValidationError(path, f"must be a finite positive number, got {out!r}")
    return out


def _nonnegative(value, path: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ScenarioValidationError(path, f"expected a number, got {value!r}") from None
    if not math.isfinite(out) or out < 0.0:
        raise ScenarioValidationError(path, f"must be finite and >= 0, got {out!r}")
    return out


@dataclass(frozen=True, eq=False)
class ArenaBounds:
    """Optional axis-aligned position box, one (lo, hi) pair per axis."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float

    def __post_init__(self):
        for axis, lo, hi in (("x", self.x_min, self.x_max),
                             ("y", self.y_min, self.y_max),
                             ("z", self.z_min, self.z_max)):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ScenarioValidationError(f"arena_bounds.{axis}", "bounds must be finite")
            if lo >= hi:
                raise ScenarioValidationError(
                    f"arena_bounds.{axis}", f"lower bound {lo} must be below upper bound {hi}")

    def lows(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.z_min])

    def highs(self) -> np.ndarray:
        return np.array([self.x_max, self.y_max, self.z_max])

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lows()) and np.all(p <= self.highs()))

    def __eq__(self, other):
        if not isinstance(other, ArenaBounds):
            return NotImplemented
        return (self.x_min, self.x_max, self.y_min, self.y_max, self.z_min, self.z_max) == \
               (other.x_min, other.x_max, other.y_min, other.y_max, other.z_min, other.z_max)


@dataclass(frozen=True, eq=False)
class VehicleSpec:
    """One vehicle: mass, boundary states, and actuation/velocity caps.

    ``goal_force`` is the input pinned at the final step; planners treat it
    as a boundary condition, exactly like goal position and velocity.
    """

    mass: float
    start_position: np.ndarray
    start_velocity: np.ndarray
    goal_position: np.ndarray
    goal_velocity: np.ndarray
    goal_force: np.ndarray
    v_max: float
    f_max: float

    def __post_init__(self):
        object.__setattr__(self, "mass", _positive(self.mass, "mass"))
        object.__setattr__(self, "v_max", _positive(self.v_max, "v_max"))
        object.__setattr__(self, "f_max", _positive(self.f_max, "f_max"))
        for name in ("start_position", "start_velocity", "goal_position",
                     "goal_velocity", "goal_force"):
            object.__setattr__(self, name, _as_vec3(getattr(self, name), name))
        if float(np.linalg.norm(self.start_velocity)) > self.v_max:
            raise ScenarioValidationError(
                "start_velocity", f"speed {np.linalg.norm(self.start_velocity):g} exceeds v_max {self.v_max:g}")
        if float(np.linalg.norm(self.goal_velocity)) > self.v_max:
            raise ScenarioValidationError(
                "goal_velocity", f"speed {np.linalg.norm(self.goal_velocity):g} exceeds v_max {self.v_max:g}")
        if float(np.linalg.norm(self.goal_force)) > self.f_max:
            raise ScenarioValidationError(
                "goal_force", f"magnitude {np.linalg.norm(self.goal_force):g} exceeds f_max {self.f_max:g}")

    def __eq__(self, other):
        if not isinstance(other, VehicleSpec):
            return NotImplemented
        return (self.mass == other.mass and self.v_max == other.v_max
                and self.f_max == other.f_max
                and all(np.array_equal(getattr(self, n), getattr(other, n))
                        for n in ("start_position", "start_velocity", "goal_position",
                                  "goal_velocity", "goal_force")))


@dataclass(frozen=True, eq=False)
class Scenario:
    """A full planning instance over a uniform time grid of ``horizon`` steps."""

    vehicles: tuple
    horizon: int
    dt: float
    safety_distance: float
    force_weight: float
    goal_weight_slope: float
    arena_bounds: Optional[ArenaBounds] = None

    def __post_init__(self):
        object.__setattr__(self, "vehicles", tuple(self.vehicles))
        if not self.vehicles:
            raise ScenarioValidationError("vehicles", "at least one vehicle is required")
        for idx, veh in enumerate(self.vehicles):
            if not isinstance(veh, VehicleSpec):
                raise ScenarioValidationError(f"vehicles[{idx}]", "expected a VehicleSpec")
        if not isinstance(self.horizon, int) or self.horizon < 2:
            raise ScenarioValidationError("horizon", f"must be an integer >= 2, got {self.horizon!r}")
        object.__setattr__(self, "dt", _positive(self.dt, "dt"))
        object.__setattr__(self, "safety_distance", _positive(self.safety_distance, "safety_distance"))
        object.__setattr__(self, "force_weight", _positive(self.force_weight, "force_weight"))
        object.__setattr__(self, "goal_weight_slope", _nonnegative(self.goal_weight_slope, "goal_weight_slope"))
        if self.arena_bounds is not None and not isinstance(self.arena_bounds, ArenaBounds):
            raise ScenarioValidationError("arena_bounds", "expected ArenaBounds or None")
        self._check_pairwise()
        if self.arena_bounds is not None:
            for idx, veh in enumerate(self.vehicles):
                for name in ("start_position", "goal_position"):
                    if not self.arena_bounds.contains(getattr(veh, name)):
                        raise ScenarioValidationError(
                            f"vehicles[{idx}].{name}", "lies outside arena_bounds")

    def _check_pairwise(self):
        d = self.safety_distance
        for i, j in self.pairs():
            for name in ("start_position", "goal_position"):
                gap = float(np.linalg.norm(getattr(self.vehicles[i], name)
                                           - getattr(self.vehicles[j], name)))
                if gap < d:
                    raise ScenarioValidationError(
                        f"vehicles[{i}]/vehicles[{j}].{name}",
                        f"separation {gap:g} is below the safety distance {d:g}")

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicles)

    def pairs(self) -> list:
        n = len(self.vehicles)
        return [(i, j) for i in range(n) for j in range(i + 1, n)]

    @property
    def pair_count(self) -> int:
        n = len(self.vehicles)
        return n * (n - 1) // 2

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (self.vehicles == other.vehicles
                and self.horizon == other.horizon
                and self.dt == other.dt
                and self.safety_distance == other.safety_distance
                and self.force_weight == other.force_weight
                and self.goal_weight_slope == other.goal_weight_slope
                and self.arena_bounds == other.arena_bounds)


_VEHICLE_KEYS = {"mass", "start_position", "start_velocity", "goal_position",
                 "goal_velocity", "goal_force", "v_max", "f_max"}
_SCENARIO_KEYS = {"vehicles", "horizon", "dt", "safety_distance", "force_weight",
                  "goal_weight_slope", "arena_bounds"}
_ARENA_KEYS = {"x_min", "x_max", "y_min", "y_max", "z_min", "z_max"}


def load_scenario(source: Union[str, IO]) -> Scenario:
    """Parse a scenario from a JSON text, file object, or path-free string.

    Raises ScenarioParseError for malformed JSON and
    ScenarioValidationError (with a field path) for schema violations.
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = source
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioParseError(f"top level must be an object, got {type(doc).__name__}")
    unknown = set(doc) - _SCENARIO_KEYS
    if unknown:
        raise ScenarioValidationError(sorted(unknown)[0], "unknown key")
    for key in ("vehicles", "horizon", "dt", "safety_distance", "force_weight", "goal_weight_slope"):
        if key not in doc:
            raise ScenarioValidationError(key, "missing required key")
    raw_vehicles = doc["vehicles"]
    if not isinstance(raw_vehicles, list) or not raw_vehicles:
        raise ScenarioValidationError("vehicles", "must be a non-empty list")
    vehicles = []
    for idx, entry in enumerate(raw_vehicles):
        path = f"vehicles[{idx}]"
        if not isinstance(entry, dict):
            raise ScenarioValidationError(path, "must be an object")
        unknown = set(entry) - _VEHICLE_KEYS
        if unknown:
            raise ScenarioValidationError(f"{path}.{sorted(unknown)[0]}", "unknown key")
        missing = _VEHICLE_KEYS - set(entry)
        if missing:
            raise ScenarioValidationError(f"{path}.{sorted(missing)[0]}", "missing required key")
        try:
            vehicles.append(VehicleSpec(**entry))
        except ScenarioValidationError as exc:
            raise ScenarioValidationError(f"{path}.{exc.field_path}",
                                          str(exc).split(": ", 1)[1]) from None
    horizon = doc["horizon"]
    if isinstance(horizon, bool) or not isinstance(horizon, int):
        raise ScenarioValidationError("horizon", f"must be an integer, got {horizon!r}")
    arena = None
    if doc.get("arena_bounds") is not None:
        raw = doc["arena_bounds"]
        if not isinstance(raw, dict):
            raise ScenarioValidationError("arena_bounds", "must be an object or null")
        unknown = set(raw) - _ARENA_KEYS
        if unknown:
            raise ScenarioValidationError(f"arena_bounds.{sorted(unknown)[0]}", "unknown key")
        missing = _ARENA_KEYS - set(raw)
        if missing:
            raise ScenarioValidationError(f"arena_bounds.{sorted(missing)[0]}", "missing required key")
        arena = ArenaBounds(**{k: float(raw[k]) for k in _ARENA_KEYS})
    return Scenario(
        vehicles=tuple(vehicles),
        horizon=horizon,
        dt=doc["dt"],
        safety_distance=doc["safety_distance"],
        force_weight=doc["force_weight"],
        goal_weight_slope=doc["goal_weight_slope"],
        arena_bounds=arena,
    )


def scenario_to_dict(scenario: Scenario) -> dict:
    """Plain-JSON form of a scenario; load_scenario inverts it exactly."""
    doc = {
        "vehicles": [
            {
                "mass": veh.mass,
                "start_position": list(veh.start_position),
                "start_velocity": list(veh.start_velocity),
                "goal_position": list(veh.goal_position),
                "goal_velocity": list(veh.goal_velocity),
                "goal_force": list(veh.goal_force),
                "v_max": veh.v_max,
                "f_max": veh.f_max,
            }
            for veh in scenario.vehicles
        ],
        "horizon": scenario.horizon,
        "dt": scenario.dt,
        "safety_distance": scenario.safety_distance,
        "force_weight": scenario.force_weight,
        "goal_weight_slope": scenario.goal_weight_slope,
    }
    if scenario.arena_bounds is not None:
        ab = scenario.arena_bounds
        doc["arena_bounds"] = {k: getattr(ab, k) for k in
                               ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max")}
    return doc


def dumps_scenario(scenario: Scenario, indent: int = 2) -> str:
    return json.dumps(scenario_to_dict(scenario), indent=indent)


# Defaults used by generate_benchmark when no base scenario is supplied.
_BASE_DEFAULTS = dict(
    horizon=30,
    dt=1.0,
    safety_distance=5.0,
    force_weight=1.0,
    goal_weight_slope=0.05,
    mass=1.0,
    v_max=10.0,
    f_max=10.0,
)


def _template_from_base(base: Optional[Scenario]) -> dict:
    if base is None:
        return dict(_BASE_DEFAULTS)
    veh = base.vehicles[0]
    return dict(
        horizon=base.horizon,
        dt=base.dt,
        safety_distance=base.safety_distance,
        force_weight=base.force_weight,
        goal_weight_slope=base.goal_weight_slope,
        mass=veh.mass,
        v_max=veh.v_max,
        f_max=veh.f_max,
    )


def generate_benchmark(n_vehicles: int,
                       pattern: str = "circle_swap",
                       seed: int = 0,
                       base: Optional[Scenario] = None,
                       radius: Optional[float] = None) -> Scenario:
    """Build a standard test instance.

    ``circle_swap`` places vehicles evenly on a circle in the z=0 plane and
    sets each goal to the antipodal point, so every vehicle flies through
    the congested center. The whole ring is rotated by a seeded phase.
    ``random_box`` samples starts and goals uniformly in a cube, rejecting
    draws closer than the safety distance.

    Every vehicle gets zero start/goal velocity and zero goal force, with
    the mass and caps of the base scenario's first vehicle (or built-in
    defaults when ``base`` is None).
    """
    if n_vehicles < 1:
        raise ScenarioValidationError("n_vehicles", f"must be >= 1, got {n_vehicles}")
    tpl = _template_from_base(base)
    d = tpl["safety_distance"]
    rng = np.random.default_rng(seed)
    zero = (0.0, 0.0, 0.0)

    if pattern == "circle_swap":
        r = radius if radius is not None else max(n_vehicles * d / math.pi, d)
        if n_vehicles >= 2:
            chord = 2.0 * r * math.sin(math.pi / n_vehicles)
            if chord < d:
                raise GeometryError(
                    f"radius {r:g} puts adjacent vehicles {chord:g} apart, "
                    f"below the safety distance {d:g}")
        phase = rng.uniform(0.0, 2.0 * math.pi)
        starts, goals = [], []
        for m in range(n_vehicles):
            ang = phase + 2.0 * math.pi * m / n_vehicles
            p = np.array([r * math.cos(ang), r * math.sin(ang), 0.0])
            starts.append(p)
            goals.append(-p)
    elif pattern == "random_box":
        side = d * max(4.0, 2.5 * n_vehicles ** (1.0 / 3.0))
        margin = 1.05 * d

        def sample_points():
            pts = []
            tries = 0
            while len(pts) < n_vehicles:
                cand = rng.uniform(-side / 2.0, side / 2.0, size=3)
                if all(np.linalg.norm(cand - q) >= margin for q in pts):
                    pts.append(cand)
                tries += 1
                if tries > 200_000:
                    raise GeometryError(
                        f"could not place {n_vehicles} points with spacing {margin:g} "
                        f"in a box of side {side:g}")
            return pts

        starts = sample_points()
        goals = sample_points()
    else:
        raise ScenarioValidationError("pattern", f"unknown pattern {pattern!r}")

    vehicles = tuple(
        VehicleSpec(
            mass=tpl["mass"],
            start_position=starts[m],
            start_velocity=zero,
            goal_position=goals[m],
            goal_velocity=zero,
            goal_force=zero,
            v_max=tpl["v_max"],
            f_max=tpl["f_max"],
        )
        for m in range(n_vehicles)
    )
    return Scenario(
        vehicles=vehicles,
        horizon=tpl["horizon"],
        dt=tpl["dt"],
        safety_distance=tpl["safety_distance"],
        force_weight=tpl["force_weight"],
        goal_weight_slope=tpl["goal_weight_slope"],
        arena_bounds=base.arena_bounds if base is not None else None,
    )
