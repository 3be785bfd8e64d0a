import csv
import math

import numpy as np
import pytest

from swarmplan import (
    DcaConfig,
    DegenerateSeparationError,
    PlanStatus,
    SolverSettings,
    SolverStatus,
    Trajectory,
    build_base_problem,
    check_feasibility,
    delta_gap,
    initialize_trajectory,
    plan_dca,
    separation,
    separation_gradient,
    solve,
    write_iteration_log,
)
from swarmplan.dca import IterationRecord, dca_iterate, make_workspace

from helpers import (
    far_apart_scenario,
    head_on_scenario,
    single_vehicle_scenario,
    straight_line_positions,
)


def _two_vehicle_trajectory(pos_i, pos_j, horizon=3):
    states = np.zeros((2, horizon, 6))
    states[0, :, :3] = pos_i
    states[1, :, :3] = pos_j
    return Trajectory(states=states, inputs=np.zeros((2, horizon, 3)))


def test_config_defaults_valid():
    cfg = DcaConfig()
    assert cfg.tau0 == 1.0
    assert cfg.anchor_policy == "accumulate_all"


def test_config_accepts_zero_tau0():
    cfg = DcaConfig(tau0=0.0, tau_max=0.0)
    assert cfg.tau0 == 0.0


@pytest.mark.parametrize("kwargs", [
    {"tau0": -1.0},
    {"mu": 1.0},
    {"mu": 0.5},
    {"tau_max": 0.5},           # below the default tau0
    {"epsilon": 0.0},
    {"max_iters": 0},
    {"slack_tol": 0.0},
    {"anchor_policy": "newest_only"},
    {"keep_last": 0},
    {"init_policy": "teleport"},
])
def test_config_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        DcaConfig(**kwargs)


def test_separation_value():
    traj = _two_vehicle_trajectory([3.0, 4.0, 0.0], [0.0, 0.0, 0.0])
    assert separation(traj, 0, 1, 0) == pytest.approx(5.0)
    assert separation(traj, 1, 0, 0) == pytest.approx(5.0)


def test_separation_gradient_components():
    traj = _two_vehicle_trajectory([3.0, 4.0, 0.0], [0.0, 0.0, 0.0])
    grad = separation_gradient(traj, 0, 1, 0)
    np.testing.assert_allclose(grad[:3], [0.6, 0.8, 0.0], atol=1e-12)
    np.testing.assert_allclose(grad[3:], [-0.6, -0.8, 0.0], atol=1e-12)
    assert np.linalg.norm(grad) == pytest.approx(math.sqrt(2.0))


def test_separation_gradient_matches_finite_differences():
    rng = np.random.default_rng(13)
    traj = _two_vehicle_trajectory(rng.normal(scale=5, size=3), rng.normal(scale=5, size=3))
    grad = separation_gradient(traj, 0, 1, 1)
    h = 1e-6
    for slot in range(6):
        states = traj.states.copy()
        vehicle, axis = (0, slot) if slot < 3 else (1, slot - 3)
        states[vehicle, 1, axis] += h
        bumped = Trajectory(states=states, inputs=traj.inputs)
        fd = (separation(bumped, 0, 1, 1) - separation(traj, 0, 1, 1)) / h
        assert grad[slot] == pytest.approx(fd, abs=1e-5)


def test_separation_gradient_degenerate():
    traj = _two_vehicle_trajectory([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateSeparationError):
        separation_gradient(traj, 0, 1, 0)


def test_initialize_straight_line():
    scn = head_on_scenario(horizon=11)
    traj = initialize_trajectory(scn, "straight_line")
    np.testing.assert_allclose(traj.positions(0),
                               straight_line_positions((-10, 0, 0), (10, 0, 0), 11),
                               atol=1e-12)
    # Forward-difference velocities: constant stride of 2 per unit step.
    np.testing.assert_allclose(traj.velocities(0)[:-1, 0], 2.0, atol=1e-12)
    np.testing.assert_allclose(traj.velocities(0)[-1], scn.vehicles[0].goal_velocity)
    # Head-on straight lines cross at the middle step.
    assert separation(traj, 0, 1, 5) == pytest.approx(0.0)


def test_initialize_hover_then_jump():
    scn = head_on_scenario(horizon=10)
    traj = initialize_trajectory(scn, "hover_then_jump")
    start = np.asarray(scn.vehicles[0].start_position)
    for k in range(5):
        np.testing.assert_allclose(traj.positions(0)[k], start, atol=1e-12)
    np.testing.assert_allclose(traj.positions(0)[-1], scn.vehicles[0].goal_position)


def test_initialize_unknown_policy():
    with pytest.raises(ValueError):
        initialize_trajectory(head_on_scenario(), "teleport")


def _record(m, f0, penalty):
    return IterationRecord(m=m, objective_f0=f0, penalty_term=penalty,
                           max_slack=0.0, delta=0.0, tau=1.0, subproblem_status="optimal")


def test_delta_gap_values():
    assert delta_gap(_record(0, 10.0, 2.0), _record(1, 10.0, 2.0)) == 0.0
    assert delta_gap(_record(3, 10.0, 2.0), _record(4, 9.0, 2.5)) == pytest.approx(-0.5)


def test_delta_gap_requires_consecutive_records():
    with pytest.raises(ValueError):
        delta_gap(_record(0, 1.0, 0.0), _record(2, 1.0, 0.0))


def test_workspace_growth_per_iteration():
    scn = far_apart_scenario(horizon=3)
    ws = make_workspace(scn)
    base_rows = ws.base_ineq_count
    assert len(ws.anchors) == 1
    for it in range(1, 4):
        rec = dca_iterate(ws)
        assert rec.subproblem_status == "optimal"
        assert len(ws.anchors) == it + 1
        assert len(ws.program.inequalities) == base_rows + it * 1 * 3


def test_penalty_escalation_and_cap():
    scn = far_apart_scenario(horizon=3)
    cfg = DcaConfig(tau0=1.0, mu=2.0, tau_max=1e4)
    ws = make_workspace(scn, cfg)
    taus = []
    for _ in range(16):
        taus.append(dca_iterate(ws).tau)
    expected = [min(2.0 ** m, 1e4) for m in range(16)]
    assert taus == pytest.approx(expected)
    assert taus[14] == 1e4  # 2^14 overshoots the ceiling


def test_keep_last_policy_bounds_row_count():
    scn = far_apart_scenario(horizon=3)
    cfg = DcaConfig(anchor_policy="keep_last_m", keep_last=2)
    ws = make_workspace(scn, cfg)
    for _ in range(5):
        dca_iterate(ws)
    dca_iterate(ws)
    assert len(ws.anchors) == 7
    assert len(ws.program.inequalities) <= ws.base_ineq_count + 2 * 1 * 3


def test_far_apart_pair_converges_with_zero_slack():
    result = plan_dca(far_apart_scenario(horizon=3))
    assert result.status == PlanStatus.CONVERGED_FEASIBLE
    assert result.log[-1].max_slack <= 1e-6
    assert result.min_separation >= 99.0


def test_head_on_swap_resolved():
    scn = head_on_scenario(horizon=11)
    result = plan_dca(scn)
    assert result.status == PlanStatus.CONVERGED_FEASIBLE
    assert result.min_separation >= scn.safety_distance - 1e-4
    final = result.log[-1]
    assert final.max_slack <= 1e-6
    assert abs(final.delta) <= DcaConfig().epsilon
    assert final.tau == DcaConfig().tau_max
    report = check_feasibility(scn, result.trajectory, tol=1e-4)
    assert report.feasible


def test_head_on_solution_is_point_symmetric():
    # Swapping the two vehicles and negating x and y is a symmetry of the
    # scenario; the planner is deterministic, so the solution inherits it.
    result = plan_dca(head_on_scenario(horizon=11))
    p0 = result.trajectory.positions(0)
    mirrored = result.trajectory.positions(1).copy()
    mirrored[:, 0] *= -1.0
    mirrored[:, 1] *= -1.0
    assert float(np.abs(p0 - mirrored).max()) <= 1e-4


def test_single_vehicle_takes_one_iteration():
    scn = single_vehicle_scenario(horizon=5)
    result = plan_dca(scn)
    assert result.status == PlanStatus.CONVERGED_FEASIBLE
    assert result.iterations == 1
    assert result.min_separation == float("inf")

    program, vmap = build_base_problem(scn)
    base = solve(program)
    assert base.status == SolverStatus.OPTIMAL
    np.testing.assert_allclose(result.trajectory.states, vmap.decode(base.primal).states,
                               atol=1e-6)


def test_zero_penalty_ceiling_reports_residual_slack():
    # With the penalty pinned at zero the subproblem has no reason to avoid
    # slack, so the loop converges onto an overlapping pair and must say so.
    result = plan_dca(head_on_scenario(horizon=11), DcaConfig(tau0=0.0, tau_max=0.0))
    assert result.status == PlanStatus.CONVERGED_INFEASIBLE_SLACK
    assert result.log[-1].max_slack > 1e-6


def test_iteration_budget_status():
    result = plan_dca(head_on_scenario(horizon=11), DcaConfig(max_iters=2))
    assert result.status == PlanStatus.ITERATION_LIMIT
    assert result.iterations == 2


def test_strangled_subproblem_reports_failure():
    cfg = DcaConfig(solver=SolverSettings(max_iters=1))
    result = plan_dca(head_on_scenario(horizon=11), cfg)
    assert result.status == PlanStatus.SUBPROBLEM_FAILURE
    assert result.log[-1].subproblem_status == SolverStatus.ITERATION_LIMIT.value


def test_first_record_has_infinite_delta():
    ws = make_workspace(far_apart_scenario(horizon=3))
    rec = dca_iterate(ws)
    assert math.isinf(rec.delta)


def test_iteration_log_round_trip(tmp_path):
    result = plan_dca(far_apart_scenario(horizon=3))
    path = tmp_path / "iters.csv"
    write_iteration_log(result.log, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["m", "objective_f0", "penalty_term", "max_slack",
                       "delta", "tau", "status"]
    assert len(rows) == 1 + result.iterations
    first = rows[1]
    assert int(first[0]) == 0
    assert float(first[1]) == pytest.approx(result.log[0].objective_f0)
    assert first[6] == "optimal"
