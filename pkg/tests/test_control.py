import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from seqdm.control import (
    LinearSystem,
    QuadraticCost,
    SingularityError,
    closed_loop,
    dual_problem,
    kalman_gain,
    kalman_step,
    lqg_closed_loop,
    lqg_fragility_instance,
    lqr_cost,
    lqr_gain,
    newton_instance,
    problem_from_json,
    problem_to_json,
    riccati_recursion,
    shift_register_beta,
    shift_register_instance,
    solve_dare,
    spectral_radius,
    stability,
)

GOLDEN = (1 + math.sqrt(5)) / 2


def scalar(a, b=1.0, phi=1.0, psi=1.0, sw=1.0, c=1.0, sv=0.0):
    return LinearSystem([[a]], [[b]], [[c]], [[sw]], [[sv]]), QuadraticCost([[phi]], [[psi]])


def random_system(rng, d=None, p=None, k=None):
    d = d or int(rng.integers(1, 5))
    p = p or int(rng.integers(1, 3))
    k = k or int(rng.integers(1, 3))
    A = rng.normal(size=(d, d))
    A *= rng.uniform(0.3, 1.3) / max(spectral_radius(A), 1e-3)
    W = rng.normal(size=(d, d))
    V = rng.normal(size=(k, k))
    return LinearSystem(A, rng.normal(size=(d, p)), rng.normal(size=(k, d)),
                        W @ W.T + 0.1 * np.eye(d), V @ V.T + 0.1 * np.eye(k))


def riccati_residual(sys, cost, M):
    A, B = sys.A, sys.B
    rhs = cost.Phi + A.T @ M @ A - A.T @ M @ B @ np.linalg.solve(cost.Psi + B.T @ M @ B, B.T @ M @ A)
    return np.max(np.abs(rhs - M))


class TestTypes:
    def test_defaults(self):
        sys = LinearSystem(np.eye(3), np.ones((3, 1)))
        np.testing.assert_array_equal(sys.C, np.eye(3))
        np.testing.assert_array_equal(sys.Sw, np.eye(3))
        np.testing.assert_array_equal(sys.Sv, np.zeros((3, 3)))

    def test_rejects_non_psd(self):
        with pytest.raises(ValueError, match="semidefinite"):
            LinearSystem(np.eye(2), np.ones((2, 1)), Sw=[[1, 0], [0, -1]])
        with pytest.raises(ValueError, match="symmetric"):
            QuadraticCost([[1, 1], [0, 1]], [[1]])

    def test_rejects_dims(self):
        with pytest.raises(ValueError):
            LinearSystem(np.eye(2), np.ones((3, 1)))
        sys, _ = newton_instance()
        with pytest.raises(ValueError):
            riccati_recursion(sys, QuadraticCost(np.eye(3), [[1]]), 3)

    def test_json_round_trip(self):
        sys, cost = newton_instance()
        text = problem_to_json(sys, cost)
        assert '"Phi"' in text and '"Sw"' in text
        sys2, cost2 = problem_from_json(text)
        for name in "A B C Sw Sv".split():
            np.testing.assert_array_equal(getattr(sys2, name), getattr(sys, name))
        np.testing.assert_array_equal(cost2.Phi, cost.Phi)


class TestRiccatiRecursion:
    def test_zero_dynamics(self):
        sys = LinearSystem(np.zeros((2, 2)), [[0.0], [1.0]])
        cost = QuadraticCost(np.diag([1.0, 2.0]), [[1.0]])
        for M, K in riccati_recursion(sys, cost, 5):
            np.testing.assert_array_equal(K, 0.0)
            np.testing.assert_array_equal(M, cost.Phi)

    def test_scalar_golden_ratio(self):
        (M0, K0), *_ = riccati_recursion(*scalar(1.0), 200)
        # m^2 - m - 1 = 0, K = m / (1 + m)
        assert M0[0, 0] == pytest.approx(GOLDEN, abs=1e-12)
        assert K0[0, 0] == pytest.approx((math.sqrt(5) - 1) / 2, abs=1e-12)

    def test_newton_gain(self):
        sys, cost = newton_instance()
        K = riccati_recursion(sys, cost, 200)[0][1]
        np.testing.assert_allclose(K, [[2.0, 3.0]], atol=1e-3)
        np.testing.assert_allclose(closed_loop(sys, K), [[1, 1], [-2, -2]], atol=1e-3)

    def test_singular_step_named(self):
        sys = LinearSystem(np.eye(2), [[0.0], [1.0]])
        cost = QuadraticCost(np.diag([1.0, 0.0]), [[0.0]])
        with pytest.raises(SingularityError) as info:
            riccati_recursion(sys, cost, 3)
        assert info.value.step == 2

    def test_bad_horizon(self):
        with pytest.raises(ValueError):
            riccati_recursion(*newton_instance(), 0)


class TestSolveDare:
    def test_zero_dynamics(self):
        sys = LinearSystem(np.zeros((2, 2)), [[0.0], [1.0]])
        cost = QuadraticCost(np.diag([1.0, 2.0]), [[1.0]])
        sol = solve_dare(sys, cost)
        np.testing.assert_array_equal(sol.M, cost.Phi)
        assert sol.converged

    def test_scalar(self):
        sol = solve_dare(*scalar(1.0))
        assert sol.converged
        assert sol.M[0, 0] == pytest.approx(GOLDEN, abs=1e-8)

    def test_shift_register_marginal(self):
        sol = solve_dare(*shift_register_instance())
        np.testing.assert_allclose(sol.K, [[0.0, -1.0]], atol=1e-3)
        assert sol.marginal and not sol.converged
        assert sol.residual <= 1e-10

    def test_matches_scipy_on_random(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            sys = random_system(rng)
            G = rng.normal(size=(sys.state_dim,) * 2)
            cost = QuadraticCost(G @ G.T + np.eye(sys.state_dim), np.eye(sys.input_dim))
            sol = solve_dare(sys, cost)
            assert sol.converged
            ref = scipy.linalg.solve_discrete_are(sys.A, sys.B, cost.Phi, cost.Psi)
            np.testing.assert_allclose(sol.M, ref, rtol=1e-7, atol=1e-7)
            assert riccati_residual(sys, cost, sol.M) <= 1e-9
            np.testing.assert_array_equal(sol.M, sol.M.T)
            assert np.linalg.eigvalsh(sol.M).min() >= -1e-9

    def test_not_converged_reports_last_iterate(self):
        sol = solve_dare(*scalar(1.0), tol=1e-15, max_iter=3)
        assert not sol.converged and sol.iterations == 3 and sol.residual > 1e-15


class TestLqrGain:
    def test_zero_dynamics(self):
        sys = LinearSystem(np.zeros((1, 1)), [[1.0]])
        np.testing.assert_array_equal(lqr_gain(sys, QuadraticCost([[1.0]], [[1.0]])), 0.0)

    def test_scalar_deadbeat(self):
        sys, cost = scalar(0.5, psi=0.0)
        K = lqr_gain(sys, cost)
        assert K[0, 0] == pytest.approx(0.5)
        assert closed_loop(sys, K)[0, 0] == pytest.approx(0.0)

    def test_newton(self):
        np.testing.assert_allclose(lqr_gain(*newton_instance()), [[2.0, 3.0]], atol=1e-3)


class TestClosedLoop:
    def test_shift_register(self):
        sys, _ = shift_register_instance()
        Acl = closed_loop(sys, [[0.0, -1.0]])
        np.testing.assert_array_equal(Acl, [[0, 1], [0, 1]])
        assert spectral_radius(Acl) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("alpha", [1.01, 1.1, 1.5])
    def test_shift_register_fragility(self, alpha):
        sys, cost = shift_register_instance()
        K = lqr_gain(sys, cost)
        assert spectral_radius(closed_loop(sys, K, alpha * sys.B)) > 1
        assert spectral_radius(closed_loop(sys, K, sys.B)) <= 1 + 1e-9

    def test_zero_gain(self):
        sys, _ = newton_instance()
        np.testing.assert_array_equal(closed_loop(sys, [[0.0, 0.0]]), sys.A)


class TestLqrCost:
    def test_scalar(self):
        sys, cost = scalar(0.5, psi=0.0)
        assert lqr_cost(sys, cost, [[0.5]]) == pytest.approx(1.0)

    def test_destabilising(self):
        sys, cost = scalar(2.0, psi=0.0)
        assert lqr_cost(sys, cost, [[0.0]]) == math.inf

    def test_matches_series_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            sys = random_system(rng)
            cost = QuadraticCost(np.eye(sys.state_dim), np.eye(sys.input_dim))
            K = lqr_gain(sys, cost)
            Acl = closed_loop(sys, K)
            X, term = np.zeros_like(Acl), sys.Sw.copy()
            for _ in range(5000):
                X += term
                term = Acl @ term @ Acl.T
            want = np.trace((cost.Phi + K.T @ cost.Psi @ K) @ X)
            assert lqr_cost(sys, cost, K) == pytest.approx(want, rel=1e-8)

    def test_minimised_at_dare_gain(self):
        rng = np.random.default_rng(2)
        sys = LinearSystem([[1.0, 1.0], [0.0, 1.0]], [[0.0], [1.0]])
        cost = QuadraticCost(np.eye(2), [[1.0]])
        K = lqr_gain(sys, cost)
        J = lqr_cost(sys, cost, K)
        for _ in range(200):
            assert lqr_cost(sys, cost, K + 0.05 * rng.normal(size=K.shape)) >= J


class TestKalman:
    def test_perfect_observation_limit(self):
        sys = LinearSystem([[1.0, 0.3], [0.0, 0.8]], np.zeros((2, 1)), np.eye(2), [[1.0, 0.2], [0.2, 0.5]])
        f = kalman_gain(sys)
        assert f.regularization == 1e-12
        np.testing.assert_allclose(f.P, sys.Sw, atol=1e-9)
        np.testing.assert_allclose(f.L, sys.A, atol=1e-9)

    def test_singular_without_regularization(self):
        sys = LinearSystem([[0.5]], [[1.0]], [[1.0]], [[0.0]], [[0.0]])
        with pytest.raises(SingularityError):
            kalman_gain(sys, regularization=None)

    def test_scalar(self):
        f = kalman_gain(LinearSystem([[0.9]], [[1.0]], [[1.0]], [[1.0]], [[1.0]]))
        p = (0.81 + math.sqrt(0.81**2 + 4)) / 2
        assert f.P[0, 0] == pytest.approx(p, abs=1e-9)
        assert f.L[0, 0] == pytest.approx(0.9 * p / (p + 1), abs=1e-9)
        assert f.L[0, 0] == pytest.approx(0.5377, abs=1e-4)

    def test_lqg_fragility_gain(self):
        f = kalman_gain(lqg_fragility_instance(1e-4))
        np.testing.assert_allclose(f.L, [[3.0], [2.0]], atol=0.05)
        # d1, d2 > 0 and shrink with sigma
        f2 = kalman_gain(lqg_fragility_instance(1e-8))
        assert np.all(f.L < [[3.0], [2.0]])
        assert np.all(np.abs(f2.L - [[3.0], [2.0]]) < np.abs(f.L - [[3.0], [2.0]]))

    def test_duality_random(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            sys = random_system(rng)
            f = kalman_gain(sys)
            dual_sys, dual_cost = dual_problem(sys)
            np.testing.assert_allclose(f.L, lqr_gain(dual_sys, dual_cost).T, atol=1e-8)


class TestKalmanStep:
    def test_zero_innovation(self):
        sys, _ = newton_instance()
        x = np.array([1.0, -2.0])
        nxt = kalman_step(x, [0.5], sys.C @ x, sys, np.ones((2, 2)))
        np.testing.assert_allclose(nxt, sys.A @ x + sys.B @ [0.5])

    def test_trusts_measurement(self):
        sys, _ = newton_instance()
        y = np.array([3.0, 4.0])
        nxt = kalman_step([1.0, -2.0], [0.5], y, sys, sys.A)
        np.testing.assert_allclose(nxt, sys.A @ y + sys.B @ [0.5])

    def test_open_loop(self):
        sys, _ = newton_instance()
        x = np.array([1.0, -2.0])
        np.testing.assert_allclose(kalman_step(x, [0.0], [9.0, 9.0], sys, np.zeros((2, 2))), sys.A @ x)

    def test_positive_innovation_sign(self):
        sys = LinearSystem([[1.0]], [[0.0]], [[1.0]])
        assert kalman_step([0.0], [0.0], [1.0], sys, [[0.5]])[0] == pytest.approx(0.5)


class TestLqgClosedLoop:
    def setup_method(self):
        self.sys = lqg_fragility_instance(1e-4)
        self.K = lqr_gain(*newton_instance())
        self.L = kalman_gain(self.sys).L

    def test_block_structure(self):
        Acl = lqg_closed_loop(self.sys, self.K, self.L)
        np.testing.assert_array_equal(Acl[2:, :2], 0.0)
        np.testing.assert_allclose(Acl[:2, :2], closed_loop(self.sys, self.K))
        np.testing.assert_allclose(Acl[2:, 2:], self.sys.A - self.L @ self.sys.C)

    def test_matches_printed_matrix_at_sigma_zero(self):
        k1, k2, t = 2.0, 3.0, 1.3
        Acl = lqg_closed_loop(self.sys, [[k1, k2]], [[3.0], [2.0]], t * self.sys.B)
        printed = [[1, 1, 3, 0], [-k1, 1 - k2, 2, 0], [0, 0, -2, 1], [k1 * (1 - t), k2 * (1 - t), -2, 1]]
        np.testing.assert_allclose(Acl, printed)

    def test_nominal_is_stable_ish(self):
        assert spectral_radius(lqg_closed_loop(self.sys, self.K, self.L)) <= 1 + 1e-6

    def test_mismatch_is_unstable(self):
        assert spectral_radius(lqg_closed_loop(self.sys, self.K, self.L, 1.1 * self.sys.B)) > 1

    def test_matches_simulated_error_dynamics(self):
        rng = np.random.default_rng(4)
        sys, K, L = self.sys, self.K, self.L
        B_star = 1.05 * sys.B
        Acl = lqg_closed_loop(sys, K, L, B_star)
        x, xh = rng.normal(size=2), rng.normal(size=2)
        for _ in range(5):
            w, v = rng.normal(size=2), rng.normal(size=1)
            u = -K @ xh
            y = sys.C @ x + v
            x_next = sys.A @ x + B_star @ u + w
            xh_next = kalman_step(xh, u, y, sys, L)
            z = Acl @ np.concatenate([xh, x - xh]) + np.concatenate([L @ v, w - L @ v])
            np.testing.assert_allclose(z, np.concatenate([xh_next, x_next - xh_next]), atol=1e-10)
            x, xh = x_next, xh_next


class TestSpectralRadius:
    def test_values(self):
        assert spectral_radius(np.eye(3)) == 1.0
        assert spectral_radius([[0, 1], [0, 1]]) == pytest.approx(1.0, abs=1e-12)
        assert spectral_radius([[1, 1], [-2, -2]]) == pytest.approx(1.0, abs=1e-12)

    def test_non_square(self):
        with pytest.raises(ValueError):
            spectral_radius(np.ones((2, 3)))

    def test_classification(self):
        assert stability(0.5 * np.eye(2)) == "stable"
        assert stability([[0, 1], [0, 1]]) == "marginal"
        assert stability(1.01 * np.eye(2)) == "unstable"

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6))
    def test_matches_reference_eigensolver(self, seed, n):
        M = np.random.default_rng(seed).normal(size=(n, n))
        ref = np.max(np.abs(scipy.linalg.eigvals(M)))
        assert abs(spectral_radius(M) - ref) <= 1e-9 * max(1.0, ref)


class TestShiftRegisterBeta:
    def test_psi_zero(self):
        assert shift_register_beta(0.0) == pytest.approx(1.0)

    @pytest.mark.parametrize("psi", [1e-3, 0.01, 0.1, 0.3])
    def test_containment_for_small_psi(self, psi):
        for horizon in (1, 2, 5, 50):
            assert 0.5 < shift_register_beta(psi, horizon) < 1.0
        assert 0.5 < shift_register_beta(psi) < 1.0

    @pytest.mark.parametrize("psi", [1.0, 10.0])
    def test_large_psi_leaves_interval(self, psi):
        # recorded: the stationary coefficient drops below 1/2 for large input cost
        beta = shift_register_beta(psi)
        assert 0.0 < beta < 0.5
