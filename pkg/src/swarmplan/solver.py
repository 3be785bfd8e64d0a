"""Conic subproblem solver.

The numerical engine is Clarabel, a sparse primal-dual interior-point solver
for conic programs. This module owns the translation from the program IR to
Clarabel's (P, q, A, b, cones) form and, more importantly, the classification
of results: a solution is reported optimal only when residuals recomputed
here, from the raw program data, meet the requested tolerances. The engine's
own status is treated as a hint, not as the verdict.

Residual scaling: every defect is relative. A linear row's defect is divided
by max(1, |coeffs|_inf, |rhs|, max_j |a_j x_j|), a cone's by max(1, norm,
|bound|), and a nonnegativity bound's by max(1, |x|_inf), so tolerances
behave sensibly for rows like x = 1 and x = 1e4 alike, and a point with
coordinates of magnitude 20 is not failed over an absolute defect of 1e-7
the engine legitimately left there.

Determinism: the engine runs a single-threaded direct factorization with no
random state, so repeated solves of the same assembled problem return
bitwise-identical results on one platform. Small input perturbations can
change the iterate path, hence results are reproducible rather than
continuous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import scipy.sparse

import clarabel

from .socp import ConicProgram

__all__ = [
    "SolverStatus",
    "SolverSettings",
    "SolverSolution",
    "solve",
    "residuals",
]


class SolverStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SolverSettings:
    """Tolerances applied by this module's own classification step."""

    tol_feas: float = 1e-8
    tol_gap: float = 1e-8
    max_iters: int = 200
    verbose: bool = False

    def __post_init__(self):
        if not (self.tol_feas > 0 and math.isfinite(self.tol_feas)):
            raise ValueError(f"tol_feas must be positive, got {self.tol_feas!r}")
        if not (self.tol_gap > 0 and math.isfinite(self.tol_gap)):
            raise ValueError(f"tol_gap must be positive, got {self.tol_gap!r}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters!r}")


@dataclass
class SolverSolution:
    """Outcome of one conic solve.

    ``objective`` is NaN unless a primal point is available. ``residuals``
    holds primal_feas (worst scaled defect over linear rows, nonnegativity,
    and cones), dual_feas, and duality_gap (relative). ``certificate``
    carries a Farkas-type certificate for infeasible/unbounded verdicts
    when the engine produced one.
    """

    status: SolverStatus
    primal: Optional[np.ndarray]
    objective: float
    residuals: dict = field(default_factory=dict)
    certificate: Optional[dict] = None
    iterations: int = 0
    message: str = ""


@dataclass
class _Assembled:
    """Sparse matrices plus block metadata shared by solve and residual checks."""

    c: np.ndarray
    a_eq: scipy.sparse.csr_matrix
    b_eq: np.ndarray
    eq_scale: np.ndarray
    g_lin: scipy.sparse.csr_matrix
    h_lin: np.ndarray
    lin_scale: np.ndarray
    nonneg: np.ndarray
    cones: list


def _stack_rows(rows, num_vars):
    if not rows:
        mat = scipy.sparse.csr_matrix((0, num_vars))
        return mat, np.zeros(0), np.zeros(0)
    counts = np.fromiter((r[0].size for r in rows), dtype=int, count=len(rows))
    cols = np.concatenate([r[0] for r in rows])
    data = np.concatenate([r[1] for r in rows])
    ridx = np.repeat(np.arange(len(rows)), counts)
    rhs = np.fromiter((r[2] for r in rows), dtype=float, count=len(rows))
    mat = scipy.sparse.csr_matrix(
        (data, (ridx, cols)), shape=(len(rows), num_vars))
    # max |coef| per row, for scaled defects
    absmat = scipy.sparse.csr_matrix((np.abs(data), (ridx, cols)),
                                     shape=(len(rows), num_vars))
    scale = np.maximum(1.0, np.maximum(absmat.max(axis=1).toarray().ravel(), np.abs(rhs)))
    return mat, rhs, scale


def _assemble(program: ConicProgram) -> _Assembled:
    a_eq, b_eq, eq_scale = _stack_rows(program.equalities, program.num_vars)
    g_lin, h_lin, lin_scale = _stack_rows(program.inequalities, program.num_vars)
    return _Assembled(
        c=program.objective.copy(),
        a_eq=a_eq, b_eq=b_eq, eq_scale=eq_scale,
        g_lin=g_lin, h_lin=h_lin, lin_scale=lin_scale,
        nonneg=np.asarray(sorted(set(program.nonneg_vars)), dtype=int),
        cones=list(program.cones),
    )


def _row_term_max(mat: scipy.sparse.csr_matrix, x: np.ndarray) -> np.ndarray:
    """Per-row max of |a_ij * x_j|: the largest term feeding each dot product."""
    terms = np.abs(mat.data) * np.abs(x[mat.indices])
    out = np.zeros(mat.shape[0])
    rows = np.repeat(np.arange(mat.shape[0]), np.diff(mat.indptr))
    np.maximum.at(out, rows, terms)
    return out


def _primal_feas(asm: _Assembled, x: np.ndarray) -> float:
    """Worst relative constraint defect at x.

    Each linear row is scaled by the largest of 1, its coefficient and
    right-hand-side magnitudes, and the terms of its dot product at x, so
    the measure stays meaningful when iterates are large. Cone defects are
    relative to the cone's own magnitude, and nonnegativity defects to the
    iterate's, since the engine's arithmetic operates at that scale.
    """
    worst = 0.0
    if asm.b_eq.size:
        scale = np.maximum(asm.eq_scale, _row_term_max(asm.a_eq, x))
        defect = np.abs(asm.a_eq @ x - asm.b_eq) / scale
        worst = max(worst, float(defect.max()))
    if asm.h_lin.size:
        scale = np.maximum(asm.lin_scale, _row_term_max(asm.g_lin, x))
        defect = np.maximum(0.0, asm.g_lin @ x - asm.h_lin) / scale
        worst = max(worst, float(defect.max()))
    if asm.nonneg.size:
        bound_defect = float(np.maximum(0.0, -x[asm.nonneg]).max())
        worst = max(worst, bound_defect / max(1.0, float(np.abs(x).max())))
    for cone in asm.cones:
        bound = cone.t_const + (x[cone.t_index] if cone.t_index is not None else 0.0)
        norm = float(np.linalg.norm(x[cone.vector_indices] + cone.shift()))
        worst = max(worst, max(0.0, norm - bound) / max(1.0, norm, abs(bound)))
    return worst


def _to_clarabel(asm: _Assembled, num_vars: int):
    """Build engine inputs. Constraint form is A x + s = b with s in the
    cone product: equality rows first (zero cone), then inequalities and
    nonnegativity (nonnegative cone), then one [bound; vector] block per
    second-order cone; coefficient entries are negated so the slack equals
    the cone member."""
    rows_i, rows_j, rows_v, b_parts, cones = [], [], [], [], []
    offset = 0

    if asm.b_eq.size:
        eq = asm.a_eq.tocoo()
        rows_i.append(eq.row); rows_j.append(eq.col); rows_v.append(eq.data)
        b_parts.append(asm.b_eq)
        cones.append(clarabel.ZeroConeT(asm.b_eq.size))
        offset += asm.b_eq.size

    n_lin = asm.h_lin.size + asm.nonneg.size
    if n_lin:
        lin = asm.g_lin.tocoo()
        rows_i.append(offset + lin.row); rows_j.append(lin.col); rows_v.append(lin.data)
        b_parts.append(asm.h_lin)
        if asm.nonneg.size:
            rr = offset + asm.h_lin.size + np.arange(asm.nonneg.size)
            rows_i.append(rr); rows_j.append(asm.nonneg)
            rows_v.append(-np.ones(asm.nonneg.size))
            b_parts.append(np.zeros(asm.nonneg.size))
        cones.append(clarabel.NonnegativeConeT(n_lin))
        offset += n_lin

    for cone in asm.cones:
        size = 1 + cone.vector_indices.size
        bblk = np.empty(size)
        bblk[0] = cone.t_const
        bblk[1:] = cone.shift()
        if cone.t_index is not None:
            rows_i.append(np.array([offset])); rows_j.append(np.array([cone.t_index]))
            rows_v.append(np.array([-1.0]))
        ri = offset + 1 + np.arange(cone.vector_indices.size)
        rows_i.append(ri); rows_j.append(cone.vector_indices)
        rows_v.append(-np.ones(cone.vector_indices.size))
        b_parts.append(bblk)
        cones.append(clarabel.SecondOrderConeT(size))
        offset += size

    ai = np.concatenate(rows_i) if rows_i else np.zeros(0, dtype=int)
    aj = np.concatenate(rows_j) if rows_j else np.zeros(0, dtype=int)
    av = np.concatenate(rows_v) if rows_v else np.zeros(0)
    b_all = np.concatenate(b_parts) if b_parts else np.zeros(0)

    a_mat = scipy.sparse.csc_matrix((av, (ai, aj)), shape=(offset, num_vars))
    p_mat = scipy.sparse.csc_matrix((num_vars, num_vars))
    return p_mat, asm.c, a_mat, b_all, cones


def _engine_settings(settings: SolverSettings) -> "clarabel.DefaultSettings":
    """Ask the engine for one decade more than the classification needs."""
    st = clarabel.DefaultSettings()
    st.verbose = bool(settings.verbose)
    st.max_iter = int(settings.max_iters)
    st.tol_feas = max(0.1 * settings.tol_feas, 1e-12)
    st.tol_gap_abs = max(0.1 * settings.tol_gap, 1e-12)
    st.tol_gap_rel = max(0.1 * settings.tol_gap, 1e-12)
    st.max_threads = 1
    return st


def _presolve(program: ConicProgram):
    """Drop all-zero rows; detect trivially contradictory ones.

    Returns (equalities, inequalities, terminal solution or None). A
    contradictory zero row yields an infeasibility verdict with a unit
    Farkas certificate on that row.
    """
    eqs, ineqs = [], []
    for row_no, (idx, coef, rhs) in enumerate(program.equalities):
        if np.all(coef == 0.0):
            if abs(rhs) > 0.0:
                y = np.zeros(len(program.equalities))
                y[row_no] = math.copysign(1.0, rhs)
                return None, None, SolverSolution(
                    status=SolverStatus.INFEASIBLE, primal=None,
                    objective=float("nan"), certificate={"y": y},
                    message=f"equality 0 == {rhs:g} cannot hold")
            continue
        eqs.append((idx, coef, rhs))
    for row_no, (idx, coef, rhs) in enumerate(program.inequalities):
        if np.all(coef == 0.0):
            if rhs < 0.0:
                z = np.zeros(len(program.inequalities))
                z[row_no] = 1.0
                return None, None, SolverSolution(
                    status=SolverStatus.INFEASIBLE, primal=None,
                    objective=float("nan"), certificate={"z": z},
                    message=f"inequality 0 <= {rhs:g} cannot hold")
            continue
        ineqs.append((idx, coef, rhs))
    return eqs, ineqs, None


def _empty_column_fixups(work: ConicProgram) -> Optional[SolverSolution]:
    """Deal with variables that appear in no constraint at all.

    With a nonzero objective coefficient the program is unbounded along
    that coordinate; otherwise the variable is pinned to zero so its value
    in the returned primal does not depend on regularization behavior.
    """
    used = np.zeros(work.num_vars, dtype=bool)
    for idx, _, _ in work.equalities:
        used[idx] = True
    for idx, _, _ in work.inequalities:
        used[idx] = True
    for cone in work.cones:
        used[cone.vector_indices] = True
        if cone.t_index is not None:
            used[cone.t_index] = True
    if work.nonneg_vars:
        used[np.asarray(work.nonneg_vars, dtype=int)] = True
    free = np.nonzero(~used)[0]
    if free.size == 0:
        return None
    hot = free[work.objective[free] != 0.0]
    if hot.size:
        ray = np.zeros(work.num_vars)
        v = hot[0]
        ray[v] = -math.copysign(1.0, work.objective[v])
        return SolverSolution(status=SolverStatus.UNBOUNDED, primal=None,
                              objective=float("nan"), certificate={"x": ray},
                              message=f"variable x{v} is unconstrained with nonzero cost")
    for v in free:
        work.add_equality([int(v)], [1.0], 0.0)
    return None


def solve(program: ConicProgram, settings: Optional[SolverSettings] = None) -> SolverSolution:
    """Solve a conic program and classify the outcome.

    Never raises for solver-side trouble; numerical breakdowns come back as
    status ``numerical_failure`` with a message.
    """
    settings = settings or SolverSettings()
    program.validate()

    work = program.copy()
    eqs, ineqs, terminal = _presolve(work)
    if terminal is not None:
        return terminal
    work.equalities, work.inequalities = eqs, ineqs

    early = _empty_column_fixups(work)
    if early is not None:
        return early

    asm = _assemble(work)
    p_mat, q_vec, a_mat, b_vec, cones = _to_clarabel(asm, work.num_vars)
    try:
        engine = clarabel.DefaultSolver(p_mat, q_vec, a_mat, b_vec, cones,
                                        _engine_settings(settings))
        sol = engine.solve()
    except Exception as exc:
        return SolverSolution(status=SolverStatus.NUMERICAL_FAILURE, primal=None,
                              objective=float("nan"),
                              message=f"engine rejected the problem: {exc}")
    return _classify(asm, sol, settings)


def _classify(asm: _Assembled, sol, settings: SolverSettings) -> SolverSolution:
    status = str(sol.status)
    iterations = int(sol.iterations)
    n_eq = asm.b_eq.size

    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        dual = np.asarray(sol.z, dtype=float)
        cert = {"y": dual[:n_eq], "z": dual[n_eq:]}
        note = "" if status == "PrimalInfeasible" else " (at reduced tolerance)"
        return SolverSolution(status=SolverStatus.INFEASIBLE, primal=None,
                              objective=float("nan"), certificate=cert,
                              iterations=iterations,
                              message=f"engine produced an infeasibility certificate{note}")
    if status in ("DualInfeasible", "AlmostDualInfeasible"):
        ray = np.asarray(sol.x, dtype=float)
        note = "" if status == "DualInfeasible" else " (at reduced tolerance)"
        return SolverSolution(status=SolverStatus.UNBOUNDED, primal=None,
                              objective=float("nan"), certificate={"x": ray},
                              iterations=iterations,
                              message=f"objective decreases along a feasible ray{note}")

    x = np.asarray(sol.x, dtype=float)
    if x.size != asm.c.size or not np.all(np.isfinite(x)):
        terminal = (SolverStatus.ITERATION_LIMIT if status in ("MaxIterations", "MaxTime")
                    else SolverStatus.NUMERICAL_FAILURE)
        return SolverSolution(status=terminal, primal=None, objective=float("nan"),
                              iterations=iterations, message=f"engine status {status!r}")

    primal_feas = _primal_feas(asm, x)
    pobj = float(asm.c @ x)
    dobj = float(sol.obj_val_dual)
    if math.isfinite(dobj):
        rel_gap = abs(pobj - dobj) / max(1.0, abs(pobj))
    else:
        rel_gap = float("nan")
    resid = {"primal_feas": primal_feas, "dual_feas": float(sol.r_dual),
             "duality_gap": rel_gap}

    ok = primal_feas <= settings.tol_feas and (math.isfinite(rel_gap)
                                               and rel_gap <= settings.tol_gap)
    if ok:
        return SolverSolution(status=SolverStatus.OPTIMAL, primal=x, objective=pobj,
                              residuals=resid, iterations=iterations)
    if status in ("MaxIterations", "MaxTime"):
        return SolverSolution(status=SolverStatus.ITERATION_LIMIT, primal=x, objective=pobj,
                              residuals=resid, iterations=iterations,
                              message="iteration budget exhausted before tolerances were met")
    return SolverSolution(status=SolverStatus.NUMERICAL_FAILURE, primal=x, objective=pobj,
                          residuals=resid, iterations=iterations,
                          message=f"engine status {status!r} with residuals beyond tolerances")


def residuals(program: ConicProgram, primal) -> dict:
    """Recompute constraint defects for an arbitrary point, row by row.

    Deliberately written as a plain loop over the IR, independent of the
    assembly used by solve(), so the two paths cross-check each other.
    Returns ``primal_feas`` (worst relative linear/nonnegativity defect),
    ``cone_violation`` (worst relative second-order cone defect), and
    ``objective``. Scaling matches _primal_feas: each defect is divided by
    the magnitude of the quantities that produced it, floored at one.
    """
    x = np.asarray(primal, dtype=float)
    if x.shape != (program.num_vars,):
        raise ValueError(f"point of shape {x.shape} does not match {program.num_vars} variables")
    worst_lin = 0.0
    for idx, coef, rhs in program.equalities:
        terms = coef * x[idx]
        scale = max(1.0, float(np.abs(coef).max()), abs(rhs), float(np.abs(terms).max()))
        worst_lin = max(worst_lin, abs(float(terms.sum()) - rhs) / scale)
    for idx, coef, rhs in program.inequalities:
        terms = coef * x[idx]
        scale = max(1.0, float(np.abs(coef).max()), abs(rhs), float(np.abs(terms).max()))
        worst_lin = max(worst_lin, max(0.0, float(terms.sum()) - rhs) / scale)
    x_mag = max(1.0, float(np.abs(x).max())) if x.size else 1.0
    for v in program.nonneg_vars:
        worst_lin = max(worst_lin, max(0.0, -float(x[v])) / x_mag)
    worst_cone = 0.0
    for cone in program.cones:
        bound = cone.t_const + (float(x[cone.t_index]) if cone.t_index is not None else 0.0)
        norm = float(np.linalg.norm(x[cone.vector_indices] + cone.shift()))
        worst_cone = max(worst_cone, max(0.0, norm - bound) / max(1.0, norm, abs(bound)))
    return {
        "primal_feas": worst_lin,
        "cone_violation": worst_cone,
        "objective": float(program.objective @ x),
    }
