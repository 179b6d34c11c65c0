"""Per-step safety filter: minimally alters nominal wheel commands so the
stacked collision constraints hold under the modeled disturbance."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import qp
from .barrier import BarrierParams, ConstraintSet, assemble_constraints, min_pairwise_h
from .disturbance import HullUnion
from .dynamics import RobotGeometry, RobotState, WheelCommand, body_output_matrix

_FALLBACKS = ("error", "zero-input", "slack")

_WEIGHT_CACHE: dict = {}


class FilterInfeasibleError(RuntimeError):
    """Raised when the QP has no feasible point and the fallback is 'error'."""


@dataclass(frozen=True)
class FilterConfig:
    """Everything the filter needs per scenario.

    fallback governs behavior on an infeasible QP: surface the failure,
    command zero wheels, or re-solve with a heavily penalized slack on the
    barrier rows (box bounds stay hard).  class_k optionally replaces the
    default cubic relaxation; it must be odd, strictly increasing, and
    broadcast over numpy arrays.
    """

    geometry: RobotGeometry
    barrier: BarrierParams
    disturbance: HullUnion
    u_max: float
    fallback: str = "slack"
    slack_weight: float = 1e6
    class_k: Callable | None = None
    prune_distance: float | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.u_max) and self.u_max > 0.0):
            raise ValueError(f"u_max must be finite and > 0, got {self.u_max!r}")
        if self.fallback not in _FALLBACKS:
            raise ValueError(f"fallback must be one of {_FALLBACKS}, got {self.fallback!r}")
        if self.fallback == "slack" and not (
            math.isfinite(self.slack_weight) and self.slack_weight > 0.0
        ):
            raise ValueError("slack fallback needs a positive slack_weight")
        if self.prune_distance is not None and not self.prune_distance > 0.0:
            raise ValueError("prune_distance must be positive when set")


@dataclass(frozen=True, eq=False)
class FilterResult:
    """Filtered commands plus diagnostics for one control step.

    wall_clock covers constraint assembly and the QP solve only; min_h is
    the smallest pairwise barrier value at the input state (inf for a single
    robot).
    """

    commands: tuple
    altered: np.ndarray
    min_h: float
    solver: qp.QpSolution
    constraints: ConstraintSet
    wall_clock: float
    fallback_applied: str | None = None

    def command_array(self) -> np.ndarray:
        out = np.empty(2 * len(self.commands))
        for k, cmd in enumerate(self.commands):
            out[2 * k] = cmd.omega_r
            out[2 * k + 1] = cmd.omega_l
        return out


def ensemble_weight(n: int, geom: RobotGeometry) -> np.ndarray:
    """Block-diagonal QP weight: n copies of the look-ahead output matrix.

    Weighting by this matrix penalizes changes to the output-point velocity,
    which favors altering angular over linear motion and so eases deadlocks.
    """
    if n < 1:
        raise ValueError("need at least one robot")
    return np.kron(np.eye(n), body_output_matrix(geom))


def _cached_weight(n: int, geom: RobotGeometry) -> np.ndarray:
    key = (n, geom)
    weight = _WEIGHT_CACHE.get(key)
    if weight is None:
        weight = ensemble_weight(n, geom)
        weight.setflags(write=False)
        _WEIGHT_CACHE[key] = weight
    return weight


def _stack_commands(commands: Sequence[WheelCommand]) -> np.ndarray:
    out = np.empty(2 * len(commands))
    for k, cmd in enumerate(commands):
        out[2 * k] = cmd.omega_r
        out[2 * k + 1] = cmd.omega_l
    return out


def _solve_with_slack(problem: qp.QpProblem, slack_weight: float) -> qp.QpSolution:
    """Relaxed re-solve: barrier rows get an elementwise penalized slack,
    box rows stay hard."""
    start = time.perf_counter()
    m = problem.variables
    n_rows = problem.rows
    base_h, base_q = qp._quadratic_terms(problem)

    hessian = np.zeros((m + n_rows, m + n_rows))
    hessian[:m, :m] = base_h
    hessian[m:, m:] = 2.0 * slack_weight * np.eye(n_rows)
    linear = np.concatenate([base_q, np.zeros(n_rows)])

    eye_u = np.eye(m)
    C = np.zeros((n_rows + 2 * m + n_rows, m + n_rows))
    C[:n_rows, :m] = problem.A
    C[:n_rows, m:] = np.eye(n_rows)
    C[n_rows : n_rows + m, :m] = eye_u
    C[n_rows + m : n_rows + 2 * m, :m] = -eye_u
    C[n_rows + 2 * m :, m:] = np.eye(n_rows)
    d = np.concatenate(
        [
            problem.b,
            np.full(m, -problem.u_max),
            np.full(m, -problem.u_max),
            np.zeros(n_rows),
        ]
    )

    max_iter = 10 * (m + n_rows + C.shape[0])
    v, lam, status, iterations, _ = qp._solve_raw(
        qp._invert_spd(hessian), linear, C, d, 1e-8, max_iter, ()
    )
    stationarity, feasibility, complementarity = qp._kkt_residuals(
        hessian, linear, C, d, v, lam
    )
    return qp.QpSolution(
        u_star=v[:m],
        status=status,
        kkt_residual=max(stationarity, complementarity),
        iterations=iterations,
        wall_clock=time.perf_counter() - start,
        multipliers=lam,
        active_set=(),
    )


def filter_step(
    states: Sequence[RobotState],
    u_nom: Sequence[WheelCommand],
    cfg: FilterConfig,
    warm_start=None,
) -> FilterResult:
    """Render one step's nominal commands safe.

    Solves min ||W (u_nom - u)||^2 over the stacked barrier rows and the box
    bound; when the commands are already safe the answer is u_nom itself.
    warm_start accepts a previous step's QpSolution to seed the active set.
    """
    n = len(states)
    if n < 1 or len(u_nom) != n:
        raise ValueError("states and u_nom must have equal length >= 1")

    start = time.perf_counter()
    constraints = assemble_constraints(
        states,
        cfg.geometry,
        cfg.barrier,
        cfg.disturbance,
        cfg.u_max,
        cfg.class_k,
        cfg.prune_distance,
    )
    weight = _cached_weight(n, cfg.geometry)
    nominal = _stack_commands(u_nom)
    problem = qp.QpProblem(weight, nominal, constraints.A, constraints.b, cfg.u_max)
    solution = qp.solve(problem, warm_start=warm_start)

    fallback_applied = None
    if solution.status != qp.OPTIMAL:
        if cfg.fallback == "error":
            raise FilterInfeasibleError(
                f"safety QP ended with status {solution.status!r}"
            )
        if cfg.fallback == "zero-input":
            solution = qp.QpSolution(
                u_star=np.zeros(2 * n),
                status=solution.status,
                kkt_residual=solution.kkt_residual,
                iterations=solution.iterations,
                wall_clock=solution.wall_clock,
                multipliers=solution.multipliers,
                active_set=(),
            )
            fallback_applied = "zero-input"
        else:
            solution = _solve_with_slack(problem, cfg.slack_weight)
            fallback_applied = "slack"
    wall_clock = time.perf_counter() - start

    u_star = solution.u_star
    altered = np.abs(u_star - nominal).reshape(n, 2).max(axis=1)
    if cfg.prune_distance is None:
        min_h = float(constraints.h_pairs.min()) if constraints.h_pairs.size else math.inf
    else:
        # Pruned stacks can drop the minimizing pair; recompute over all pairs.
        min_h = min_pairwise_h(states, cfg.geometry, cfg.barrier)
    commands = tuple(
        WheelCommand(u_star[2 * k], u_star[2 * k + 1]) for k in range(n)
    )
    return FilterResult(
        commands=commands,
        altered=altered,
        min_h=min_h,
        solver=solution,
        constraints=constraints,
        wall_clock=wall_clock,
        fallback_applied=fallback_applied,
    )


def certificate_holds(
    states: Sequence[RobotState],
    u: Sequence[WheelCommand],
    cfg: FilterConfig,
    tol: float = 1e-9,
):
    """Directly evaluate the robust certificate for every pair and hull.

    Returns (holds, worst_margin): the minimum slack of A u - b and whether
    it clears -tol.  A single robot trivially holds with infinite margin.
    """
    constraints = assemble_constraints(
        states, cfg.geometry, cfg.barrier, cfg.disturbance, cfg.u_max, cfg.class_k
    )
    if constraints.rows == 0:
        return True, math.inf
    slack = constraints.A @ _stack_commands(u) - constraints.b
    worst = float(slack.min())
    return worst >= -tol, worst
