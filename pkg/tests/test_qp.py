import numpy as np
import pytest

from robustcbf import (
    QpProblem,
    Tolerances,
    kkt_check,
    objective_value,
    solve,
)
from robustcbf.qp import INFEASIBLE, OPTIMAL

from .oracles import projected_gradient_qp


def random_orthogonal(rng, n):
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return q


def random_problem(rng, m=None, rows=None, u_max=25.0):
    """Strongly convex, feasible by construction: b backs off from a point
    strictly inside the box."""
    m = m if m is not None else int(rng.integers(1, 7))
    rows = rows if rows is not None else int(rng.integers(0, 11))
    basis = random_orthogonal(rng, m)
    weight = basis @ np.diag(rng.uniform(0.5, 2.0, size=m)) @ basis.T
    u_nom = rng.uniform(-1.5 * u_max, 1.5 * u_max, size=m)
    A = rng.normal(size=(rows, m))
    interior = rng.uniform(-0.5 * u_max, 0.5 * u_max, size=m)
    b = A @ interior - rng.uniform(0.1, 5.0, size=rows)
    return QpProblem(weight, u_nom, A, b, u_max)


class TestProblemValidation:
    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            QpProblem(np.eye(2), np.zeros(3), np.zeros((1, 2)), np.zeros(1), 1.0)
        with pytest.raises(ValueError):
            QpProblem(np.eye(2), np.zeros(2), np.zeros((1, 3)), np.zeros(1), 1.0)
        with pytest.raises(ValueError):
            QpProblem(np.eye(2), np.zeros(2), np.zeros((2, 2)), np.zeros(1), 1.0)

    def test_non_finite_data(self):
        with pytest.raises(ValueError):
            QpProblem(np.eye(2), np.array([np.nan, 0.0]), np.zeros((0, 2)), np.zeros(0), 1.0)

    def test_singular_weight_rejected(self):
        with pytest.raises(ValueError):
            QpProblem(np.zeros((2, 2)), np.zeros(2), np.zeros((0, 2)), np.zeros(0), 1.0)

    def test_ill_conditioned_weight_warns(self):
        weight = np.diag([1.0, 1e-9])
        with pytest.warns(UserWarning):
            QpProblem(weight, np.zeros(2), np.zeros((0, 2)), np.zeros(0), 1.0)

    def test_problem_does_not_freeze_callers_arrays(self):
        A = np.ones((1, 2))
        QpProblem(np.eye(2), np.zeros(2), A, np.zeros(1), 1.0)
        A[0, 0] = 2.0  # caller's array stays writable


class TestScalarExamples:
    def test_clamped_projection(self):
        # min (u - 2)^2 s.t. u >= 3, |u| <= 25.
        problem = QpProblem(np.eye(1), np.array([2.0]), np.array([[1.0]]), np.array([3.0]), 25.0)
        sol = solve(problem)
        assert sol.status == OPTIMAL
        assert sol.u_star[0] == pytest.approx(3.0, abs=1e-10)

    def test_inactive_constraints_return_u_nom(self, rng):
        for _ in range(20):
            m = int(rng.integers(1, 5))
            weight = np.eye(m)
            u_nom = rng.uniform(-5.0, 5.0, size=m)
            A = rng.normal(size=(4, m))
            b = A @ u_nom - rng.uniform(1.0, 3.0, size=4)
            sol = solve(QpProblem(weight, u_nom, A, b, 25.0))
            assert sol.status == OPTIMAL
            np.testing.assert_allclose(sol.u_star, u_nom, atol=1e-8)

    def test_box_only_clamp(self):
        problem = QpProblem(np.eye(1), np.array([40.0]), np.zeros((0, 1)), np.zeros(0), 25.0)
        sol = solve(problem)
        assert sol.u_star[0] == pytest.approx(25.0, abs=1e-10)


class TestOracleAgreement:
    def test_matches_projected_gradient_oracle(self, rng):
        for _ in range(60):
            problem = random_problem(rng, m=4, rows=int(rng.integers(0, 7)))
            sol = solve(problem)
            assert sol.status == OPTIMAL
            _, oracle_obj = projected_gradient_qp(
                problem.weight, problem.u_nom, problem.A, problem.b, problem.u_max
            )
            assert objective_value(problem, sol.u_star) == pytest.approx(
                oracle_obj, abs=1e-6
            )

    def test_kkt_residuals_at_oracle_solutions(self, rng):
        for _ in range(20):
            problem = random_problem(rng, m=3, rows=5)
            oracle_u, _ = projected_gradient_qp(
                problem.weight, problem.u_nom, problem.A, problem.b, problem.u_max
            )
            stationarity, feasibility, complementarity = kkt_check(problem, oracle_u)
            assert stationarity <= 1e-5
            assert feasibility <= 1e-5
            assert complementarity <= 1e-5


class TestKktCheck:
    def test_analytic_optimum(self):
        problem = QpProblem(np.eye(1), np.array([2.0]), np.array([[1.0]]), np.array([3.0]), 25.0)
        stationarity, feasibility, complementarity = kkt_check(problem, np.array([3.0]))
        assert stationarity <= 1e-8
        assert feasibility <= 1e-8
        assert complementarity <= 1e-8

    def test_interior_nominal_point(self):
        problem = QpProblem(
            np.eye(2), np.array([1.0, -2.0]), np.array([[1.0, 0.0]]), np.array([-10.0]), 25.0
        )
        stationarity, feasibility, complementarity = kkt_check(problem, problem.u_nom)
        assert stationarity == 0.0
        assert feasibility == 0.0
        assert complementarity == 0.0

    def test_solver_solutions_certify(self, rng):
        for _ in range(30):
            problem = random_problem(rng)
            sol = solve(problem)
            assert sol.status == OPTIMAL
            stationarity, feasibility, complementarity = kkt_check(problem, sol.u_star)
            assert stationarity <= 1e-6
            assert feasibility <= 1e-8
            assert complementarity <= 1e-6


class TestSolutionInvariants:
    def test_feasibility_of_optimal_answers(self, rng):
        for _ in range(50):
            problem = random_problem(rng)
            sol = solve(problem)
            assert sol.status == OPTIMAL
            if problem.rows:
                assert np.all(problem.A @ sol.u_star - problem.b >= -1e-8)
            assert np.abs(sol.u_star).max() <= problem.u_max + 1e-10
            assert sol.kkt_residual <= 1e-8
            assert sol.wall_clock >= 0.0

    def test_row_order_does_not_change_the_answer(self, rng):
        for _ in range(20):
            problem = random_problem(rng, m=4, rows=8)
            base = solve(problem).u_star
            perm = rng.permutation(8)
            shuffled = QpProblem(
                problem.weight, problem.u_nom, problem.A[perm], problem.b[perm], problem.u_max
            )
            np.testing.assert_allclose(solve(shuffled).u_star, base, atol=1e-6)

    def test_objective_scaling_leaves_argmin(self, rng):
        for scale in (1e-3, 1.0, 1e3):
            rng_local = np.random.default_rng(7)
            problem = random_problem(rng_local, m=4, rows=6)
            scaled = QpProblem(
                np.sqrt(scale) * problem.weight,
                problem.u_nom,
                problem.A,
                problem.b,
                problem.u_max,
            )
            np.testing.assert_allclose(
                solve(scaled).u_star, solve(problem).u_star, atol=1e-8
            )

    def test_warm_start_consistency(self, rng):
        for _ in range(25):
            problem = random_problem(rng, m=5, rows=9)
            cold = solve(problem)
            warm = solve(problem, warm_start=cold)
            np.testing.assert_allclose(warm.u_star, cold.u_star, atol=1e-6)
            assert warm.status == OPTIMAL
            # A perturbed problem warm-started from the old active set
            # still reaches its own optimum.
            nudged = QpProblem(
                problem.weight,
                problem.u_nom + 1e-3,
                problem.A,
                problem.b,
                problem.u_max,
            )
            np.testing.assert_allclose(
                solve(nudged, warm_start=cold).u_star, solve(nudged).u_star, atol=1e-6
            )

    def test_iteration_and_multiplier_bookkeeping(self, rng):
        problem = random_problem(rng, m=4, rows=6)
        sol = solve(problem)
        assert sol.iterations >= 0
        assert sol.multipliers.shape == (6 + 8,)
        assert np.all(sol.multipliers >= -1e-12)
        for idx in sol.active_set:
            assert 0 <= idx < 14


class TestInfeasible:
    def test_contradictory_rows(self):
        # u >= 1 and u <= -1 cannot both hold.
        problem = QpProblem(
            np.eye(1),
            np.array([0.0]),
            np.array([[1.0], [-1.0]]),
            np.array([1.0, 1.0]),
            25.0,
        )
        sol = solve(problem)
        assert sol.status == INFEASIBLE

    def test_row_outside_the_box(self):
        # u >= 30 conflicts with |u| <= 25.
        problem = QpProblem(
            np.eye(1), np.array([0.0]), np.array([[1.0]]), np.array([30.0]), 25.0
        )
        sol = solve(problem)
        assert sol.status == INFEASIBLE

    def test_multidimensional_conflict(self, rng):
        A = np.array([[1.0, 1.0], [-1.0, -1.0]])
        b = np.array([2.0, 2.0])
        problem = QpProblem(np.eye(2), np.zeros(2), A, b, 25.0)
        assert solve(problem).status == INFEASIBLE

    def test_infeasibility_is_status_not_exception(self):
        problem = QpProblem(
            np.eye(1), np.array([0.0]), np.array([[1.0]]), np.array([30.0]), 25.0
        )
        sol = solve(problem, tol=Tolerances(max_iterations=3))
        assert sol.status in (INFEASIBLE, "max-iterations")


class TestTolerances:
    def test_defaults(self):
        tol = Tolerances()
        assert tol.feasibility == 1e-8
        assert tol.stationarity == 1e-8
        assert tol.max_iterations is None

    def test_max_iteration_cap_reports(self, rng):
        problem = random_problem(rng, m=6, rows=10)
        sol = solve(problem, tol=Tolerances(max_iterations=1))
        assert sol.status in (OPTIMAL, "max-iterations")
