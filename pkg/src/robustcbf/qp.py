"""Dense solver for strongly convex quadratic programs with inequality rows
and an infinity-norm box bound.

The algorithm is a dual active-set method: it starts from the unconstrained
optimum and adds violated constraints one at a time, taking partial dual
steps when a blocking multiplier would turn negative.  For strictly convex
problems this terminates finitely, returns exact multipliers, and detects
primal infeasibility when the dual becomes unbounded.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max-iterations"

_DEPENDENCE_RTOL = 1e-12
_CONDITION_WARN = 1e8

# Condition numbers are cached per weight-matrix object so that a filter
# reusing one weight across control steps pays for the SVD once.
_COND_CACHE: dict = {}


def _weight_condition(weight_obj, weight: np.ndarray) -> float:
    key = id(weight_obj)
    hit = _COND_CACHE.get(key)
    if hit is not None and hit[0] is weight_obj:
        return hit[1]
    cond = float(np.linalg.cond(weight))
    if len(_COND_CACHE) > 64:
        _COND_CACHE.clear()
    _COND_CACHE[key] = (weight_obj, cond)
    return cond


@dataclass(frozen=True)
class Tolerances:
    """Solver tolerances; max_iterations defaults to 10 * (variables + rows)."""

    feasibility: float = 1e-8
    stationarity: float = 1e-8
    max_iterations: int | None = None


@dataclass(frozen=True, eq=False)
class QpProblem:
    """min ||weight @ (u_nom - u)||^2  s.t.  A u >= b  and  |u|_inf <= u_max."""

    weight: np.ndarray
    u_nom: np.ndarray
    A: np.ndarray
    b: np.ndarray
    u_max: float

    def __post_init__(self) -> None:
        weight_obj = self.weight
        weight = np.asarray(self.weight, dtype=float)
        u_nom = np.asarray(self.u_nom, dtype=float).reshape(-1)
        m = u_nom.size
        matrix = np.asarray(self.A, dtype=float)
        if matrix.size == 0:
            matrix = matrix.reshape(0, m)
        matrix = np.atleast_2d(matrix)
        rhs = np.asarray(self.b, dtype=float).reshape(-1)

        if weight.shape != (m, m):
            raise ValueError(f"weight must be {m}x{m}, got {weight.shape}")
        if matrix.shape[1] != m:
            raise ValueError(
                f"A has {matrix.shape[1]} columns but the problem has {m} variables"
            )
        if rhs.shape[0] != matrix.shape[0]:
            raise ValueError("A and b disagree on the number of rows")
        for name, arr in (("weight", weight), ("u_nom", u_nom), ("A", matrix), ("b", rhs)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
        if not (math.isfinite(self.u_max) and self.u_max > 0.0):
            raise ValueError(f"u_max must be finite and > 0, got {self.u_max!r}")

        cond = _weight_condition(weight_obj, weight)
        if not math.isfinite(cond):
            raise ValueError("weight matrix is singular")
        if cond > _CONDITION_WARN:
            warnings.warn(
                f"weight matrix condition number {cond:.3e} exceeds {_CONDITION_WARN:.0e}",
                stacklevel=2,
            )

        weight = weight.copy()
        u_nom = u_nom.copy()
        matrix = matrix.copy()
        rhs = rhs.copy()
        for arr in (weight, u_nom, matrix, rhs):
            arr.setflags(write=False)
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "u_nom", u_nom)
        object.__setattr__(self, "A", matrix)
        object.__setattr__(self, "b", rhs)
        object.__setattr__(self, "u_max", float(self.u_max))

    @property
    def variables(self) -> int:
        return self.u_nom.size

    @property
    def rows(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True, eq=False)
class QpSolution:
    """Solver output; multipliers and active_set refer to the stacked rows
    [A; lower box; upper box] and feed warm starts and KKT checks."""

    u_star: np.ndarray
    status: str
    kkt_residual: float
    iterations: int
    wall_clock: float
    multipliers: np.ndarray
    active_set: tuple


def _quadratic_terms(problem: QpProblem):
    hessian = 2.0 * problem.weight.T @ problem.weight
    linear = -hessian @ problem.u_nom
    return hessian, linear


# The filter solves with one weight matrix at control rate; memoize its
# inverse Hessian by value.
_INVERSE_CACHE: dict = {}


def _invert_spd(hessian: np.ndarray) -> np.ndarray:
    inverse = np.linalg.inv(hessian)
    return 0.5 * (inverse + inverse.T)


def _cached_inverse(weight: np.ndarray, hessian: np.ndarray) -> np.ndarray:
    key = weight.tobytes()
    hit = _INVERSE_CACHE.get(key)
    if hit is not None:
        return hit
    inverse = _invert_spd(hessian)
    inverse.setflags(write=False)
    if len(_INVERSE_CACHE) > 16:
        _INVERSE_CACHE.clear()
    _INVERSE_CACHE[key] = inverse
    return inverse


def _stacked_constraints(problem: QpProblem):
    m = problem.variables
    eye = np.eye(m)
    C = np.vstack([problem.A, eye, -eye])
    d = np.concatenate(
        [problem.b, np.full(m, -problem.u_max), np.full(m, -problem.u_max)]
    )
    return C, d


class _WorkingSet:
    """Active rows with incrementally maintained N, J N^T and N J N^T."""

    def __init__(self, inv_hessian: np.ndarray, C: np.ndarray):
        self._J = inv_hessian
        self._C = C
        self.indices: list = []
        m = inv_hessian.shape[0]
        self._N = np.zeros((0, m))
        self._JNt = np.zeros((m, 0))
        self._B = np.zeros((0, 0))

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def N(self) -> np.ndarray:
        return self._N

    def add(self, idx: int, c: np.ndarray, Jc: np.ndarray) -> None:
        k = self.size
        new_B = np.empty((k + 1, k + 1))
        if k:
            col = self._N @ Jc
            new_B[:k, :k] = self._B
            new_B[:k, k] = col
            new_B[k, :k] = col
        new_B[k, k] = float(c @ Jc)
        self._B = new_B
        self._N = np.vstack([self._N, c[None, :]])
        self._JNt = np.hstack([self._JNt, Jc[:, None]])
        self.indices.append(idx)

    def drop(self, pos: int) -> None:
        del self.indices[pos]
        self._N = np.delete(self._N, pos, axis=0)
        self._JNt = np.delete(self._JNt, pos, axis=1)
        self._B = np.delete(np.delete(self._B, pos, axis=0), pos, axis=1)

    def solve_B(self, rhs: np.ndarray) -> np.ndarray:
        if self.size == 0:
            return np.zeros(0)
        return np.linalg.solve(self._B, rhs)

    def eq_multipliers(self, linear: np.ndarray, d: np.ndarray) -> np.ndarray:
        rhs = d[self.indices] + self._JNt.T @ linear
        return self.solve_B(rhs)

    def primal(self, linear: np.ndarray, lam: np.ndarray) -> np.ndarray:
        return self._JNt @ lam - self._J @ linear

    def try_add(self, idx: int) -> bool:
        c = self._C[idx]
        Jc = self._J @ c
        cJc = float(c @ Jc)
        if cJc <= 0.0:
            return False
        if self.size:
            w_vec = self._N @ Jc
            try:
                r_dir = self.solve_B(w_vec)
            except np.linalg.LinAlgError:
                return False
            schur = cJc - float(w_vec @ r_dir)
            if schur <= _DEPENDENCE_RTOL * cJc:
                return False
        self.add(idx, c, Jc)
        return True

    def bulk_load(self, indices) -> bool:
        """Load a whole active set at once; False when the rows are not
        safely independent (caller falls back to sequential adds)."""
        idx = list(indices)
        if not idx:
            return True
        N = self._C[idx]
        JNt = self._J @ N.T
        B = N @ JNt
        try:
            chol = np.linalg.cholesky(B)
        except np.linalg.LinAlgError:
            return False
        diag = np.diagonal(chol)
        if diag.min() ** 2 <= _DEPENDENCE_RTOL * max(float(np.diagonal(B).max()), 1e-300):
            return False
        self.indices = idx
        self._N = N
        self._JNt = JNt
        self._B = B
        return True


def _solve_raw(inv_hessian, linear, C, d, feas_tol, max_iter, warm=()):
    """Dual active-set loop on min 0.5 u'Hu + q'u s.t. C u >= d, with
    inv_hessian = H^-1 precomputed by the caller.

    Returns (u, full multipliers, status, iterations, active indices).
    """
    n_rows = C.shape[0]
    ws = _WorkingSet(inv_hessian, C)

    lam_w = np.zeros(0)
    warm = [int(i) for i in warm if 0 <= i < n_rows]
    if warm and not ws.bulk_load(warm):
        for idx in warm:
            ws.try_add(idx)
    if ws.size:
        # Equality-solve on the warm active set, pruning negative multipliers.
        while True:
            lam_w = ws.eq_multipliers(linear, d)
            if ws.size == 0 or (lam_w >= 0.0).all():
                break
            ws.drop(int(np.argmin(lam_w)))
        u = ws.primal(linear, lam_w) if ws.size else -inv_hessian @ linear
    else:
        u = -inv_hessian @ linear

    iterations = 0
    status = OPTIMAL
    while True:
        residual = C @ u - d
        worst = int(np.argmin(residual))
        if residual[worst] >= -feas_tol:
            break
        c = C[worst]
        d_r = d[worst]
        lam_new = 0.0
        while True:
            iterations += 1
            if iterations > max_iter:
                status = MAX_ITERATIONS
                break
            Jc = inv_hessian @ c
            cJc = float(c @ Jc)
            if ws.size:
                w_vec = ws.N @ Jc
                r_dir = ws.solve_B(w_vec)
                step_dir = Jc - ws._JNt @ r_dir
                schur = cJc - float(w_vec @ r_dir)
            else:
                r_dir = np.zeros(0)
                step_dir = Jc
                schur = cJc

            if schur <= _DEPENDENCE_RTOL * max(cJc, 1e-300):
                # Candidate row is dependent on the active rows: dual-only step.
                positive = r_dir > 0.0
                if not positive.any():
                    status = INFEASIBLE
                    break
                ratios = np.where(positive, lam_w / np.where(positive, r_dir, 1.0), np.inf)
                block = int(np.argmin(ratios))
                t = ratios[block]
                lam_w = lam_w - t * r_dir
                lam_new += t
                ws.drop(block)
                lam_w = np.delete(lam_w, block)
                continue

            violation = float(c @ u - d_r)
            t_full = -violation / schur
            if ws.size:
                positive = r_dir > 0.0
                if positive.any():
                    ratios = np.where(
                        positive, lam_w / np.where(positive, r_dir, 1.0), np.inf
                    )
                    block = int(np.argmin(ratios))
                    t_block = ratios[block]
                else:
                    block = -1
                    t_block = math.inf
            else:
                block = -1
                t_block = math.inf

            t = min(t_full, t_block)
            u = u + t * step_dir
            if ws.size:
                lam_w = lam_w - t * r_dir
            lam_new += t
            if t_full <= t_block:
                ws.add(worst, c, Jc)
                lam_w = np.append(lam_w, lam_new)
                break
            ws.drop(block)
            lam_w = np.delete(lam_w, block)
        if status != OPTIMAL:
            break

    if status == OPTIMAL and ws.size:
        # Re-solve the final equality system: removes drift accumulated by
        # the incremental primal updates.
        lam_w = ws.eq_multipliers(linear, d)
        u = ws.primal(linear, lam_w)

    lam_full = np.zeros(n_rows)
    if ws.size:
        lam_full[ws.indices] = lam_w
    return u, lam_full, status, iterations, tuple(ws.indices)


def _kkt_residuals(hessian, linear, C, d, u, lam):
    gradient = hessian @ u + linear
    stationarity = float(np.abs(gradient - C.T @ lam).max()) if lam.size else float(
        np.abs(gradient).max()
    )
    residual = C @ u - d
    feasibility = float(max(0.0, (-residual).max())) if residual.size else 0.0
    complementarity = float(np.abs(lam * residual).max()) if lam.size else 0.0
    dual_negativity = float(max(0.0, -lam.min())) if lam.size else 0.0
    return stationarity, feasibility, max(complementarity, dual_negativity)


def solve(problem: QpProblem, tol: Tolerances | None = None, warm_start=None) -> QpSolution:
    """Solve the box-and-rows QP.

    warm_start may be a previous QpSolution or an iterable of stacked-row
    indices; it seeds the active set and never changes the answer, only the
    iteration count.  Infeasibility is reported through the status, not an
    exception.
    """
    tol = tol or Tolerances()
    start = time.perf_counter()
    hessian, linear = _quadratic_terms(problem)
    inv_hessian = _cached_inverse(problem.weight, hessian)
    C, d = _stacked_constraints(problem)
    max_iter = tol.max_iterations
    if max_iter is None:
        max_iter = 10 * (problem.variables + C.shape[0])

    if warm_start is None:
        warm: tuple = ()
    elif isinstance(warm_start, QpSolution):
        warm = warm_start.active_set
    else:
        warm = tuple(int(i) for i in warm_start)

    u, lam, status, iterations, active = _solve_raw(
        inv_hessian, linear, C, d, tol.feasibility, max_iter, warm
    )
    stationarity, feasibility, complementarity = _kkt_residuals(
        hessian, linear, C, d, u, lam
    )
    kkt_residual = max(stationarity, complementarity)
    if status == OPTIMAL and (
        feasibility > tol.feasibility or kkt_residual > tol.stationarity
    ):
        status = MAX_ITERATIONS
    return QpSolution(
        u_star=u,
        status=status,
        kkt_residual=kkt_residual,
        iterations=iterations,
        wall_clock=time.perf_counter() - start,
        multipliers=lam,
        active_set=active,
    )


def kkt_check(problem: QpProblem, u, active_tol: float = 1e-6):
    """Independent first-order optimality certificate at a candidate point.

    Multipliers are recovered by nonnegative least squares on the rows active
    at u; returns (stationarity, feasibility, complementarity) residuals.
    """
    from scipy.optimize import nnls

    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != problem.variables:
        raise ValueError("candidate point has the wrong dimension")
    hessian, linear = _quadratic_terms(problem)
    C, d = _stacked_constraints(problem)
    gradient = hessian @ u + linear
    residual = C @ u - d
    feasibility = float(max(0.0, (-residual).max())) if residual.size else 0.0
    active = np.flatnonzero(np.abs(residual) <= active_tol * (1.0 + np.abs(d)))
    if active.size == 0:
        return float(np.abs(gradient).max()), feasibility, 0.0
    lam_active, _ = nnls(C[active].T, gradient)
    stationarity = float(np.abs(C[active].T @ lam_active - gradient).max())
    complementarity = float(np.abs(lam_active * residual[active]).max())
    return stationarity, feasibility, complementarity


def objective_value(problem: QpProblem, u) -> float:
    """||weight @ (u_nom - u)||^2 at a candidate point."""
    u = np.asarray(u, dtype=float).reshape(-1)
    r = problem.weight @ (problem.u_nom - u)
    return float(r @ r)
