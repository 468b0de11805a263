import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdiv import _kernels
from hdiv.lasso_core import (
    LassoFit,
    QuadraticLassoProblem,
    check_kkt,
    solve_quadratic_lasso,
    soft_threshold,
)
from hdiv.model import NumericalError, TuningConfig, ValidationError

from oracles import grid_lasso_oracle_2d


def random_2d_problem(rng, lam=None):
    # minimizer of the unpenalized problem kept well inside the [-2, 2] box
    A = rng.standard_normal((2, 2))
    Q = A.T @ A + 0.2 * np.eye(2)
    target = rng.uniform(-1.0, 1.0, size=2)
    c = Q @ target
    if lam is None:
        lam = float(rng.uniform(0.0, 0.5))
    return QuadraticLassoProblem(Q=Q, c=c, lam=lam)


class TestSoftThreshold:
    def test_definition(self):
        assert soft_threshold(1.2, 0.5) == pytest.approx(0.7)

    def test_dead_zone(self):
        assert soft_threshold(-0.3, 0.5) == 0.0

    def test_identity_at_zero_threshold(self):
        for z in (-2.5, 0.0, 0.17, 1e9):
            assert soft_threshold(z, 0.0) == z

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValidationError):
            soft_threshold(1.0, -0.1)

    @given(
        z=st.floats(-1e6, 1e6, allow_nan=False),
        t=st.floats(0.0, 1e6, allow_nan=False),
    )
    def test_shrinkage_and_sign(self, z, t):
        out = soft_threshold(z, t)
        assert abs(out) <= abs(z)
        assert out == 0.0 or np.sign(out) == np.sign(z)


class TestSolve:
    def test_orthonormal_design_reduces_to_soft_threshold(self):
        prob = QuadraticLassoProblem(Q=np.eye(2), c=np.array([1.2, -0.3]), lam=0.5)
        fit = solve_quadratic_lasso(prob)
        np.testing.assert_allclose(fit.coefficients, [0.7, 0.0], atol=1e-12)
        assert fit.converged

    def test_identity_gram_zero_penalty(self):
        c = np.array([0.4, -1.7])
        prob = QuadraticLassoProblem(Q=np.eye(2), c=c, lam=0.0)
        fit = solve_quadratic_lasso(prob)
        np.testing.assert_allclose(fit.coefficients, c, atol=1e-12)

    def test_correlated_design_matches_grid_oracle(self):
        # expected values frozen from grid_lasso_oracle_2d (and the
        # closed-form sign-pattern solution (1.0, -0.2), objective -0.84)
        Q = np.array([[1.0, 0.5], [0.5, 1.0]])
        c = np.array([1.0, 0.2])
        prob = QuadraticLassoProblem(Q=Q, c=c, lam=0.1)
        beta_star, f_star = grid_lasso_oracle_2d(Q, c, 0.1)
        np.testing.assert_allclose(beta_star, [1.0, -0.2], atol=2e-4)
        assert f_star == pytest.approx(-0.84, abs=1e-6)
        fit = solve_quadratic_lasso(prob)
        np.testing.assert_allclose(fit.coefficients, beta_star, atol=1e-3)
        assert fit.objective == pytest.approx(f_star, abs=1e-6)

    def test_many_random_problems_match_grid_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            prob = random_2d_problem(rng)
            beta_star, f_star = grid_lasso_oracle_2d(prob.Q, prob.c, prob.lam)
            fit = solve_quadratic_lasso(prob)
            assert fit.converged
            np.testing.assert_allclose(fit.coefficients, beta_star, atol=1e-3)
            assert fit.objective <= f_star + 1e-6

    def test_full_shrinkage(self):
        rng = np.random.default_rng(3)
        prob = random_2d_problem(rng, lam=100.0)
        fit = solve_quadratic_lasso(prob)
        np.testing.assert_array_equal(fit.coefficients, np.zeros(2))

    def test_pinned_zero_diagonal_feasible(self):
        Q = np.array([[1.0, 0.0], [0.0, 0.0]])
        prob = QuadraticLassoProblem(Q=Q, c=np.array([1.0, 0.05]), lam=0.1)
        fit = solve_quadratic_lasso(prob)
        assert fit.coefficients[1] == 0.0
        np.testing.assert_allclose(fit.coefficients[0], 0.9, atol=1e-10)

    def test_unbounded_coordinate_rejected(self):
        Q = np.array([[1.0, 0.0], [0.0, 0.0]])
        prob = QuadraticLassoProblem(Q=Q, c=np.array([1.0, 0.5]), lam=0.1)
        with pytest.raises(NumericalError, match="unbounded"):
            solve_quadratic_lasso(prob)

    def test_asymmetric_gram_rejected(self):
        Q = np.array([[1.0, 0.3], [0.2, 1.0]])
        with pytest.raises(ValidationError, match="symmetric"):
            QuadraticLassoProblem(Q=Q, c=np.zeros(2), lam=0.1)

    def test_warm_start_equivalence(self):
        rng = np.random.default_rng(11)
        config = TuningConfig()
        for _ in range(10):
            prob = random_2d_problem(rng)
            cold = solve_quadratic_lasso(prob, config=config)
            warm = solve_quadratic_lasso(
                prob, warm_start=rng.uniform(-2, 2, size=2), config=config
            )
            assert cold.kkt_residual < 10 * config.tol
            assert warm.kkt_residual < 10 * config.tol
            np.testing.assert_allclose(
                warm.coefficients, cold.coefficients, atol=1e-6
            )

    def test_scaling_covariance(self):
        rng = np.random.default_rng(5)
        for s in (0.01, 3.0, 250.0):
            prob = random_2d_problem(rng)
            scaled = QuadraticLassoProblem(Q=s * prob.Q, c=s * prob.c, lam=s * prob.lam)
            a = solve_quadratic_lasso(prob)
            b = solve_quadratic_lasso(scaled)
            np.testing.assert_allclose(
                a.coefficients, b.coefficients, atol=1e-7
            )

    def test_objective_monotone_per_sweep(self):
        rng = np.random.default_rng(19)
        A = rng.standard_normal((12, 8))
        Q = np.ascontiguousarray(A.T @ A / 12)
        c = rng.standard_normal(8)
        lam_w = np.full(8, 0.1)
        beta = np.zeros(8)
        g = -c.copy()
        free = np.diagonal(Q) > 0
        prev = np.inf
        for _ in range(40):
            # tol=0 forces exactly one sweep per call
            _kernels._cd_numpy(Q, c, lam_w, beta, g, free, 0.0, 1)
            obj = float(beta @ Q @ beta - 2 * c @ beta + 2 * np.sum(lam_w * np.abs(beta)))
            assert obj <= prev + 1e-12
            prev = obj

    def test_nonconvergence_reports_best_iterate(self):
        rng = np.random.default_rng(23)
        A = rng.standard_normal((40, 30))
        Q = A.T @ A / 40
        c = rng.standard_normal(30)
        prob = QuadraticLassoProblem(Q=Q, c=c, lam=0.01)
        fit = solve_quadratic_lasso(prob, config=TuningConfig(tol=1e-14, max_sweeps=2))
        assert not fit.converged
        assert fit.sweeps_used == 2
        assert np.all(np.isfinite(fit.coefficients))


class TestCheckKkt:
    def test_zero_at_unpenalized_optimum(self):
        c = np.array([0.4, -1.7])
        prob = QuadraticLassoProblem(Q=np.eye(2), c=c, lam=0.0)
        assert check_kkt(prob, c) <= 1e-12

    def test_zero_vector_optimal_for_zero_c(self):
        prob = QuadraticLassoProblem(Q=np.eye(3), c=np.zeros(3), lam=0.2)
        assert check_kkt(prob, np.zeros(3)) == 0.0

    def test_perturbed_optimum_violates(self):
        prob = QuadraticLassoProblem(
            Q=np.array([[1.0, 0.5], [0.5, 1.0]]), c=np.array([1.0, 0.2]), lam=0.1
        )
        fit = solve_quadratic_lasso(prob)
        beta = fit.coefficients.copy()
        beta[0] += 0.1
        # direct subgradient evaluation: g = Q beta - c, active coordinate
        g = prob.Q @ beta - prob.c
        expected = abs(g[0] + 0.1 * np.sign(beta[0]))
        assert check_kkt(prob, beta) >= expected - 1e-12
        assert check_kkt(prob, beta) > 1e-3

    def test_solver_certificate_matches_check(self):
        rng = np.random.default_rng(2)
        prob = random_2d_problem(rng)
        fit = solve_quadratic_lasso(prob)
        assert check_kkt(prob, fit.coefficients) == pytest.approx(
            fit.kkt_residual, abs=1e-15
        )
