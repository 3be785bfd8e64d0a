import math

import numpy as np
import pytest

from swarmplan import (
    ConicProgram,
    EnumerationGuardError,
    ProgramError,
    SolverStatus,
    branch_and_bound,
    build_base_problem,
    build_cubic_micp,
    enumerate_exhaustive,
    poly_lorentz2_rows,
    poly_membership,
    solve,
)
from swarmplan.micp import Disjunction

from helpers import (
    far_apart_scenario,
    head_on_scenario,
    make_scenario,
    make_vehicle,
    perpendicular_crossing_scenario,
)


def test_membership_point_oracles():
    # Level 3 hugs the disk closely: a diagonal interior point passes, a
    # point 20 percent beyond the radius does not.
    assert poly_membership(3.0, 3.0, 5.0, 3)
    assert not poly_membership(6.0, 0.0, 5.0, 3)
    # Level 1 is a coarse square: the same outside point slips in along a
    # vertex direction but not past the circumradius.
    assert poly_membership(6.0, 0.0, 5.0, 1)
    assert not poly_membership(6.9, 0.0, 5.0, 1)
    # Face-center directions never admit more than the disk radius.
    assert not poly_membership(4.9, 4.9, 5.0, 1)


def test_membership_broadcasts():
    xs = np.array([0.0, 6.0, 3.0])
    ys = np.array([0.0, 0.0, 3.0])
    np.testing.assert_array_equal(poly_membership(xs, ys, 5.0, 3),
                                  [True, False, True])


def test_membership_validation():
    with pytest.raises(ValueError):
        poly_membership(1.0, 1.0, 0.0, 3)
    with pytest.raises(ValueError):
        poly_membership(1.0, 1.0, 5.0, 0)


@pytest.mark.parametrize("level", [1, 2, 3, 4, 5, 6])
def test_polygon_sandwiches_the_disk(level):
    # Outer approximation: contains the disk, contained in the scaled disk.
    rng = np.random.default_rng(level)
    d = 5.0
    angles = rng.uniform(0.0, 2.0 * math.pi, size=2000)
    radii = d * np.sqrt(rng.uniform(0.0, 1.0, size=2000))
    inside = poly_membership(radii * np.cos(angles), radii * np.sin(angles), d, level)
    assert bool(np.all(inside))

    circum = d / math.cos(math.pi / 2.0 ** (level + 1))
    far = circum + 1e-6 + rng.uniform(0.0, d, size=2000)
    outside = poly_membership(far * np.cos(angles), far * np.sin(angles), d, level)
    assert not bool(np.any(outside))


def _membership_via_rows(px, py, d, level):
    """Feasibility of the row system with (x, y) pinned, as an LP oracle."""
    program = ConicProgram(num_vars=2)
    program.add_equality([0], [1.0], px)
    program.add_equality([1], [1.0], py)
    poly_lorentz2_rows(program, 0, 1, float(d), level)
    return solve(program).status == SolverStatus.OPTIMAL


@pytest.mark.parametrize("level", [1, 3])
def test_rows_agree_with_closed_form_membership(level):
    rng = np.random.default_rng(77 + level)
    d = 5.0
    pts = rng.uniform(-1.6 * d, 1.6 * d, size=(40, 2))
    for px, py in pts:
        expect = poly_membership(px, py, d, level)
        # Skip razor-edge points where LP tolerance could flip the call.
        if abs(np.hypot(px, py) - d) < 1e-3:
            continue
        assert _membership_via_rows(px, py, d, level) == expect


def test_rows_with_variable_bound():
    # min t subject to the level-6 polygon rows: t lands within a percent
    # of the true norm (the polygon circumradius at level 6 is 1.00094).
    program = ConicProgram(num_vars=3)
    program.objective[2] = 1.0
    program.add_equality([0], [1.0], 3.0)
    program.add_equality([1], [1.0], 4.0)
    poly_lorentz2_rows(program, 0, 1, 2, level=6)
    sol = solve(program)
    assert sol.status == SolverStatus.OPTIMAL
    assert 5.0 * math.cos(math.pi / 2.0 ** 7) <= sol.objective <= 5.0 + 1e-6


def test_rows_bookkeeping_counts():
    program = ConicProgram(num_vars=2)
    level = 4
    block = poly_lorentz2_rows(program, 0, 1, 7.5, level)
    assert block.level == level
    assert block.aux_vars.size == 2 * (level + 1)
    assert block.equality_rows.size == level
    assert block.inequality_rows.size == 4 + 2 * level + 2
    assert program.num_vars == 2 + 2 * (level + 1)


def test_rows_validation():
    program = ConicProgram(num_vars=2)
    with pytest.raises(ValueError):
        poly_lorentz2_rows(program, 0, 1, 5.0, level=0)
    with pytest.raises(ProgramError):
        poly_lorentz2_rows(program, 0, 1, 99, level=2)  # int bound = missing var
    with pytest.raises(ProgramError):
        poly_lorentz2_rows(program, 0, 1, -1.0, level=2)


def test_build_counts_and_big_m():
    scn = make_scenario(
        [make_vehicle((0, 0, 0), (20, 0, 0)), make_vehicle((0, 10, 0), (20, 10, 0))],
        horizon=3)
    program, disjunctions, binaries = build_cubic_micp(scn)
    assert len(disjunctions) == 3
    assert binaries.size == 18
    # Each disjunction adds 6 unit-interval rows, 6 face rows, 1 cardinality row.
    assert len(program.inequalities) == 3 * 13
    # Extents are (20, 10, 0) and d = 5: widest axis gives 2 * (20 + 5).
    assert disjunctions[0].big_m == 50.0


def test_face_rows_use_per_axis_big_m():
    scn = make_scenario(
        [make_vehicle((0, 0, 0), (20, 0, 0)), make_vehicle((0, 10, 0), (20, 10, 0))],
        horizon=3)
    program, disjunctions, _ = build_cubic_micp(scn)
    disj = disjunctions[0]
    face_coeffs = {}
    for idx, coef, rhs in program.inequalities:
        if idx.size == 3 and rhs == -scn.safety_distance:
            for slot, v in enumerate(disj.face_vars):
                if int(v) == int(idx[2]):
                    face_coeffs[slot] = float(coef[2])
    # Axis order (+x, -x, +y, -y, +z, -z) with M = (50, 30, 20).
    assert face_coeffs == {0: -50.0, 1: -50.0, 2: -30.0, 3: -30.0, 4: -20.0, 5: -20.0}


def test_face_margins_oracle():
    disj = Disjunction(i=0, j=1, k=0, face_vars=np.arange(6), big_m=50.0,
                       pos_i=np.array([6, 7, 8]), pos_j=np.array([9, 10, 11]),
                       safety_distance=5.0)
    primal = np.zeros(12)
    primal[6:9] = [7.0, 0.0, 0.0]
    np.testing.assert_allclose(disj.face_margins(primal),
                               [2.0, -12.0, -5.0, -5.0, -5.0, -5.0])


def test_cube_is_conservative_about_diagonal_gaps():
    # A (3, 3, 3) offset is Euclidean-safe for d = 5 (norm ~5.196) yet no
    # cube face holds, so the cube model must reject it.
    disj = Disjunction(i=0, j=1, k=0, face_vars=np.arange(6), big_m=50.0,
                       pos_i=np.array([6, 7, 8]), pos_j=np.array([9, 10, 11]),
                       safety_distance=5.0)
    primal = np.zeros(12)
    primal[6:9] = [3.0, 3.0, 3.0]
    assert np.linalg.norm(primal[6:9]) > 5.0
    assert bool(np.all(disj.face_margins(primal) < 0.0))


def test_far_apart_solves_at_the_root():
    scn = far_apart_scenario(horizon=3)
    program, disjunctions, _ = build_cubic_micp(scn)
    result = branch_and_bound(program, disjunctions)
    assert result.solution.status == SolverStatus.OPTIMAL
    assert result.nodes == 1
    assert result.bound == result.solution.objective

    base_program, _ = build_base_problem(scn)
    base = solve(base_program)
    assert result.solution.objective == pytest.approx(base.objective, abs=1e-6)


def test_assignment_picks_one_face_per_disjunction():
    scn = far_apart_scenario(horizon=3)
    program, disjunctions, _ = build_cubic_micp(scn)
    result = branch_and_bound(program, disjunctions)
    assert result.assignment.shape == (3, 6)
    np.testing.assert_array_equal((result.assignment == 0).sum(axis=1), [1, 1, 1])
    for disj, row in zip(disjunctions, result.assignment):
        chosen = int(np.argmin(row))
        assert disj.face_margins(result.solution.primal)[chosen] >= -1e-6


def test_branch_and_bound_matches_enumeration():
    scn = make_scenario(
        [make_vehicle((-10, 0, 0), (10, 0, 0), v_max=30, f_max=30),
         make_vehicle((10, 0, 0), (-10, 0, 0), v_max=30, f_max=30)],
        horizon=3)
    program, disjunctions, _ = build_cubic_micp(scn)
    bnb = branch_and_bound(program, disjunctions)
    enum = enumerate_exhaustive(program, disjunctions)
    assert bnb.solution.status == SolverStatus.OPTIMAL
    assert enum.status == SolverStatus.OPTIMAL
    assert bnb.solution.objective == pytest.approx(enum.objective, abs=1e-6)


def test_both_searches_agree_on_infeasibility():
    # Velocity caps pin the mid step of this head-on pair onto a collision,
    # so no face assignment works.
    scn = head_on_scenario(horizon=3)
    program, disjunctions, _ = build_cubic_micp(scn)
    bnb = branch_and_bound(program, disjunctions)
    enum = enumerate_exhaustive(program, disjunctions)
    assert bnb.solution.status == SolverStatus.INFEASIBLE
    assert enum.status == SolverStatus.INFEASIBLE


def test_contested_crossing_needs_branching():
    scn = perpendicular_crossing_scenario(horizon=5)
    program, disjunctions, _ = build_cubic_micp(scn)
    result = branch_and_bound(program, disjunctions)
    assert result.solution.status == SolverStatus.OPTIMAL
    assert result.nodes > 1
    # The proven bound certifies the incumbent.
    assert result.bound >= result.solution.objective - 1e-6
    # The winning trajectory really keeps some axis gap of d everywhere.
    for disj in disjunctions:
        assert disj.face_margins(result.solution.primal).max() >= -1e-6


def test_node_limit_reports_iteration_limit():
    scn = perpendicular_crossing_scenario(horizon=5)
    program, disjunctions, _ = build_cubic_micp(scn)
    result = branch_and_bound(program, disjunctions, node_limit=1)
    assert result.solution.status == SolverStatus.ITERATION_LIMIT
    assert result.nodes == 1
    assert result.assignment is None


def test_node_log_is_populated():
    scn = perpendicular_crossing_scenario(horizon=5)
    program, disjunctions, _ = build_cubic_micp(scn)
    result = branch_and_bound(program, disjunctions)
    assert len(result.node_log) == result.nodes
    assert result.node_log[0]["depth"] == 0
    assert all(entry["status"] in ("optimal", "infeasible") for entry in result.node_log)


def test_empty_disjunctions_rejected():
    program = ConicProgram(num_vars=1)
    program.add_equality([0], [1.0], 0.0)
    with pytest.raises(ValueError):
        branch_and_bound(program, [])


def test_enumeration_guard():
    scn = head_on_scenario(horizon=6)
    program, disjunctions, _ = build_cubic_micp(scn)
    assert len(disjunctions) == 6  # 6^6 = 46656 combinations
    with pytest.raises(EnumerationGuardError):
        enumerate_exhaustive(program, disjunctions)
