"""Mixed-integer conic baseline planner and polyhedral cone approximation.

Collision avoidance here is combinatorial: for every vehicle pair and step,
at least one face of an axis-aligned cube of side 2d must separate the
pair. Each of the six face conditions is written with a big-M relaxation
controlled by a binary column, and a cardinality row forces at least one
binary to zero. Since the cube encloses the Euclidean safety sphere, any
trajectory feasible for the cube constraints is feasible for the true
pairwise-distance constraints; the price is conservatism, visible whenever
per-axis gaps all sit below d while the Euclidean gap does not.

The binaries are searched by best-first branch and bound over conic node
relaxations, with an exhaustive single-active-face enumeration available as
an oracle on small instances.

``poly_lorentz2_rows`` provides the classic polyhedral outer approximation
of the planar second-order cone (a folded sequence of rotations with
absolute-value rows), so norm bounds can be written with linear rows only.
Level L yields a regular 2^(L+1)-gon whose circumradius exceeds the disk
radius by a factor 1/cos(pi / 2^(L+1)).
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .scenario import Scenario
from .socp import ConicProgram, ProgramError, build_base_problem
from .solver import SolverSettings, SolverSolution, SolverStatus, solve

__all__ = [
    "EnumerationGuardError",
    "PolyApproxBlock",
    "poly_lorentz2_rows",
    "poly_membership",
    "Disjunction",
    "build_cubic_micp",
    "BnbResult",
    "branch_and_bound",
    "enumerate_exhaustive",
]

_ENUMERATION_CAP = 10_000


class EnumerationGuardError(ValueError):
    """The instance is too large for exhaustive face enumeration."""


@dataclass(frozen=True)
class PolyApproxBlock:
    """Bookkeeping for one polyhedral cone block added to a program."""

    level: int
    aux_vars: np.ndarray
    equality_rows: np.ndarray
    inequality_rows: np.ndarray


def _fold_angles(level: int) -> List[float]:
    # Step s rotates by pi / 2^(s+2): pi/4, pi/8, ... halving each level.
    return [math.pi / 2.0 ** (s + 2) for s in range(level)]


def poly_membership(x, y, d: float, level: int):
    """Whether (x, y) lies in the level-L polyhedral disk of radius d.

    Implements the fold recursion in closed form: starting from the
    absolute coordinates, each step rotates by the halving angle and takes
    the absolute value of the residual, which is the tightest choice the
    row system allows. Accepts scalars or numpy arrays (broadcast), and is
    exact up to floating-point rounding.
    """
    if not (d > 0.0 and math.isfinite(d)):
        raise ValueError(f"d must be positive, got {d!r}")
    if not (1 <= int(level) <= 60):
        raise ValueError(f"level must be in 1..60, got {level!r}")
    level = int(level)
    a = np.abs(np.asarray(x, dtype=float))
    b = np.abs(np.asarray(y, dtype=float))
    for theta in _fold_angles(level):
        a, b = (math.cos(theta) * a + math.sin(theta) * b,
                np.abs(-math.sin(theta) * a + math.cos(theta) * b))
    cap = math.tan(math.pi / 2.0 ** (level + 1))
    inside = (a <= d) & (b <= cap * a)
    if inside.ndim == 0:
        return bool(inside)
    return inside


def poly_lorentz2_rows(program: ConicProgram, x_index: int, y_index: int,
                       bound: Union[int, float], level: int) -> PolyApproxBlock:
    """Append linear rows approximating ||(x, y)|| <= bound from outside.

    ``bound`` is a variable index when given as a Python int, otherwise a
    constant. Adds 2(level+1) auxiliary variables (one alpha/beta pair per
    fold level) and the base, rotation, and cap rows. Every point of the
    true disk satisfies the rows; points beyond the polygon circumradius do
    not.
    """
    if not (1 <= int(level) <= 60):
        raise ValueError(f"level must be in 1..60, got {level!r}")
    level = int(level)
    bound_is_var = isinstance(bound, (int, np.integer)) and not isinstance(bound, bool)
    if bound_is_var and not (0 <= int(bound) < program.num_vars):
        raise ProgramError(f"bound variable {bound} out of range")
    if not bound_is_var and not (float(bound) >= 0.0 and math.isfinite(float(bound))):
        raise ProgramError(f"constant bound must be finite and >= 0, got {bound!r}")

    first = program.add_vars(2 * (level + 1))
    alpha = [first + 2 * s for s in range(level + 1)]
    beta = [first + 2 * s + 1 for s in range(level + 1)]

    eq_rows, ineq_rows = [], []

    def ineq(indices, coeffs, rhs):
        ineq_rows.append(len(program.inequalities))
        program.add_inequality(indices, coeffs, rhs)

    # Base level: alpha_0 >= |x|, beta_0 >= |y|.
    ineq([x_index, alpha[0]], [1.0, -1.0], 0.0)
    ineq([x_index, alpha[0]], [-1.0, -1.0], 0.0)
    ineq([y_index, beta[0]], [1.0, -1.0], 0.0)
    ineq([y_index, beta[0]], [-1.0, -1.0], 0.0)

    for s, theta in enumerate(_fold_angles(level)):
        c, sn = math.cos(theta), math.sin(theta)
        eq_rows.append(len(program.equalities))
        program.add_equality([alpha[s + 1], alpha[s], beta[s]], [1.0, -c, -sn], 0.0)
        ineq([alpha[s], beta[s], beta[s + 1]], [-sn, c, -1.0], 0.0)
        ineq([alpha[s], beta[s], beta[s + 1]], [sn, -c, -1.0], 0.0)

    if bound_is_var:
        ineq([alpha[level], int(bound)], [1.0, -1.0], 0.0)
    else:
        ineq([alpha[level]], [1.0], float(bound))
    cap = math.tan(math.pi / 2.0 ** (level + 1))
    ineq([beta[level], alpha[level]], [1.0, -cap], 0.0)

    return PolyApproxBlock(
        level=level,
        aux_vars=np.arange(first, first + 2 * (level + 1)),
        equality_rows=np.asarray(eq_rows, dtype=int),
        inequality_rows=np.asarray(ineq_rows, dtype=int),
    )


@dataclass(frozen=True)
class Disjunction:
    """Six relaxed face rows tied to one vehicle pair at one step.

    ``face_vars`` holds the binary column indices in the fixed order
    (+x, -x, +y, -y, +z, -z), where +x means vehicle i leads vehicle j
    along x by at least the safety distance. ``pos_i``/``pos_j`` are the
    pair's position variable indices at this step, so search code can
    evaluate face margins straight from a primal vector.
    """

    i: int
    j: int
    k: int
    face_vars: np.ndarray
    big_m: float
    pos_i: np.ndarray
    pos_j: np.ndarray
    safety_distance: float

    def face_margins(self, primal: np.ndarray) -> np.ndarray:
        """Per-face slack of the hard condition (gap - d); >= 0 means holds."""
        diff = primal[self.pos_i] - primal[self.pos_j]
        out = np.empty(6)
        out[0::2] = diff - self.safety_distance
        out[1::2] = -diff - self.safety_distance
        return out


def build_cubic_micp(scenario: Scenario) -> Tuple[ConicProgram, List[Disjunction], np.ndarray]:
    """Base problem plus cube-separation disjunctions for every pair/step.

    Returns the program, the disjunction records, and the array of all
    binary column indices. Binaries are modeled as [0, 1] columns; only the
    search layer gives them integer meaning. The big-M values come from the
    per-axis extent of the start/goal hull (or the arena box), floored at
    the safety distance and doubled, which safely covers any sensible
    trajectory corridor.
    """
    program, vmap = build_base_problem(scenario)
    d = scenario.safety_distance
    if scenario.arena_bounds is not None:
        extent = scenario.arena_bounds.highs() - scenario.arena_bounds.lows()
    else:
        pts = np.array([list(v.start_position) for v in scenario.vehicles]
                       + [list(v.goal_position) for v in scenario.vehicles])
        extent = pts.max(axis=0) - pts.min(axis=0)
    big_m = 2.0 * (np.maximum(extent, d) + d)

    disjunctions: List[Disjunction] = []
    binaries: List[int] = []
    for i, j in scenario.pairs():
        for k in range(scenario.horizon):
            first = program.add_vars(6)
            face_vars = np.arange(first, first + 6)
            for v in face_vars:
                program.mark_nonneg(int(v))
                program.add_inequality([int(v)], [1.0], 1.0)
            pos_i = vmap.position_indices(i, k)
            pos_j = vmap.position_indices(j, k)
            for axis in range(3):
                for slot, sign in ((0, 1.0), (1, -1.0)):
                    u = int(face_vars[2 * axis + slot])
                    # sign*(p_i - p_j)[axis] >= d - M*u
                    program.add_inequality(
                        [int(pos_i[axis]), int(pos_j[axis]), u],
                        [-sign, sign, -float(big_m[axis])], -d)
            program.add_inequality(face_vars, np.ones(6), 5.0)
            disjunctions.append(Disjunction(
                i=i, j=j, k=k, face_vars=face_vars, big_m=float(big_m.max()),
                pos_i=pos_i, pos_j=pos_j, safety_distance=d))
            binaries.extend(int(v) for v in face_vars)
    program.validate()
    return program, disjunctions, np.asarray(binaries, dtype=int)


@dataclass
class BnbResult:
    """Search outcome: the incumbent solution, its binary assignment
    (rows follow the disjunction list, columns the face order), the node
    count, and the proven lower bound."""

    solution: SolverSolution
    assignment: Optional[np.ndarray]
    nodes: int
    bound: float
    node_log: List[dict] = field(default_factory=list)


def _solve_with_fixes(program: ConicProgram, fixes: dict,
                      settings: SolverSettings) -> SolverSolution:
    node = program.copy()
    for var, val in fixes.items():
        node.add_equality([var], [1.0], float(val))
    return solve(node, settings)


def _candidate_assignment(disjunctions: Sequence[Disjunction], primal: np.ndarray,
                          margin_tol: float) -> Optional[np.ndarray]:
    """One-zero-per-disjunction assignment consistent with a node solution,
    or None when some disjunction has no face within tolerance."""
    rows = []
    for disj in disjunctions:
        margins = disj.face_margins(primal)
        best = int(np.argmax(margins))
        if margins[best] < -margin_tol:
            return None
        row = np.ones(6, dtype=int)
        row[best] = 0
        rows.append(row)
    return np.asarray(rows, dtype=int)


def _assignment_fixes(disjunctions: Sequence[Disjunction], assignment: np.ndarray) -> dict:
    fixes = {}
    for disj, row in zip(disjunctions, assignment):
        for v, val in zip(disj.face_vars, row):
            fixes[int(v)] = int(val)
    return fixes


def branch_and_bound(program: ConicProgram, disjunctions: Sequence[Disjunction],
                     settings: Optional[SolverSettings] = None,
                     node_limit: int = 50_000) -> BnbResult:
    """Best-first search over face binaries with conic node relaxations.

    Every feasible node is probed for a rounding candidate (a face within
    tolerance for every disjunction); candidates are re-solved with the
    binaries pinned, so incumbent objectives are exact integral values, not
    relaxation guesses. Branching picks the most fractional binary among
    the violated disjunctions. Nodes whose relaxation bound cannot beat the
    incumbent are discarded, which preserves optimality because bounds
    inherit monotonically.
    """
    if not disjunctions:
        raise ValueError("at least one disjunction is required")
    settings = settings or SolverSettings()
    margin_tol = max(1e-6, 10.0 * settings.tol_feas)

    best_solution: Optional[SolverSolution] = None
    best_assignment: Optional[np.ndarray] = None
    best_obj = float("inf")
    nodes = 0
    node_log: List[dict] = []
    counter = itertools.count()
    heap: List[tuple] = [(-math.inf, next(counter), {})]
    exhausted_bound = math.inf
    limit_hit = False

    def try_candidate(primal: np.ndarray):
        nonlocal best_solution, best_assignment, best_obj
        assignment = _candidate_assignment(disjunctions, primal, margin_tol)
        if assignment is None:
            return
        exact = _solve_with_fixes(program, _assignment_fixes(disjunctions, assignment),
                                  settings)
        if exact.status is SolverStatus.OPTIMAL and exact.objective < best_obj - 1e-12:
            best_solution = exact
            best_assignment = assignment
            best_obj = exact.objective

    while heap:
        bound, _, fixes = heapq.heappop(heap)
        if bound >= best_obj - 1e-9 * max(1.0, abs(best_obj)):
            exhausted_bound = min(exhausted_bound, bound if bound != -math.inf else best_obj)
            break
        if nodes >= node_limit:
            limit_hit = True
            exhausted_bound = bound if bound != -math.inf else -math.inf
            break
        nodes += 1
        sol = _solve_with_fixes(program, fixes, settings)
        node_log.append({"node": nodes, "bound": None if bound == -math.inf else bound,
                         "depth": len(fixes), "status": sol.status.value})
        if sol.status is SolverStatus.INFEASIBLE:
            continue
        if sol.status is not SolverStatus.OPTIMAL or sol.primal is None:
            failure = SolverSolution(
                status=SolverStatus.NUMERICAL_FAILURE, primal=None,
                objective=float("nan"),
                message=f"node relaxation ended with {sol.status.value}")
            return BnbResult(solution=failure, assignment=None, nodes=nodes,
                             bound=-math.inf, node_log=node_log)
        if sol.objective >= best_obj - 1e-9 * max(1.0, abs(best_obj)):
            continue

        try_candidate(sol.primal)

        violated = []
        for pos, disj in enumerate(disjunctions):
            margins = disj.face_margins(sol.primal)
            ok = False
            for slot, v in enumerate(disj.face_vars):
                fixed = fixes.get(int(v))
                if fixed == 0 or (fixed is None and margins[slot] >= -margin_tol):
                    ok = True
                    break
            if not ok:
                violated.append(pos)
        if not violated:
            # Candidate resolution above already captured this node's value.
            continue

        branch_var = None
        branch_frac = -1.0
        for pos in violated:
            for v in disjunctions[pos].face_vars:
                v = int(v)
                if v in fixes:
                    continue
                val = float(np.clip(sol.primal[v], 0.0, 1.0))
                frac = min(val, 1.0 - val)
                if frac > branch_frac + 1e-15:
                    branch_frac = frac
                    branch_var = v
        if branch_var is None:
            continue  # every face pinned to 1 makes the cardinality row infeasible
        for val in (0, 1):
            child = dict(fixes)
            child[branch_var] = val
            heapq.heappush(heap, (sol.objective, next(counter), child))

    if limit_hit and best_solution is None:
        failure = SolverSolution(status=SolverStatus.ITERATION_LIMIT, primal=None,
                                 objective=float("nan"),
                                 message=f"node limit {node_limit} reached without incumbent")
        return BnbResult(solution=failure, assignment=None, nodes=nodes,
                         bound=exhausted_bound, node_log=node_log)
    if best_solution is None:
        infeasible = SolverSolution(status=SolverStatus.INFEASIBLE, primal=None,
                                    objective=float("nan"),
                                    message="no face assignment admits a trajectory")
        return BnbResult(solution=infeasible, assignment=None, nodes=nodes,
                         bound=math.inf, node_log=node_log)
    if limit_hit:
        best_solution = SolverSolution(
            status=SolverStatus.ITERATION_LIMIT, primal=best_solution.primal,
            objective=best_solution.objective, residuals=best_solution.residuals,
            iterations=best_solution.iterations,
            message=f"node limit {node_limit} reached; incumbent returned without proof")
        return BnbResult(solution=best_solution, assignment=best_assignment,
                         nodes=nodes, bound=exhausted_bound, node_log=node_log)
    return BnbResult(solution=best_solution, assignment=best_assignment,
                     nodes=nodes, bound=best_obj, node_log=node_log)


def enumerate_exhaustive(program: ConicProgram, disjunctions: Sequence[Disjunction],
                         settings: Optional[SolverSettings] = None) -> SolverSolution:
    """Try every single-active-face combination; the best objective wins.

    With D disjunctions this is 6^D conic solves, guarded at 10^4. For each
    combination the chosen face binary is pinned to zero (making its row
    hard) and the other five to one (their rows relax away), so results are
    directly comparable with branch_and_bound on the same program.
    """
    count = len(disjunctions)
    total = 6 ** count
    if total > _ENUMERATION_CAP:
        raise EnumerationGuardError(
            f"6^{count} = {total} combinations exceed the cap of {_ENUMERATION_CAP}")
    settings = settings or SolverSettings()
    best: Optional[SolverSolution] = None
    failures = 0
    for combo in itertools.product(range(6), repeat=count):
        fixes = {}
        for disj, face in zip(disjunctions, combo):
            for slot, v in enumerate(disj.face_vars):
                fixes[int(v)] = 0 if slot == face else 1
        sol = _solve_with_fixes(program, fixes, settings)
        if sol.status is SolverStatus.OPTIMAL:
            if best is None or sol.objective < best.objective:
                best = sol
        elif sol.status is not SolverStatus.INFEASIBLE:
            failures += 1
    if best is not None:
        if failures:
            best.message = (best.message + f" ({failures} combinations failed numerically)").strip()
        return best
    if failures:
        return SolverSolution(status=SolverStatus.NUMERICAL_FAILURE, primal=None,
                              objective=float("nan"),
                              message=f"{failures} combinations failed numerically")
    return SolverSolution(status=SolverStatus.INFEASIBLE, primal=None,
                          objective=float("nan"),
                          message="every face combination is infeasible")
