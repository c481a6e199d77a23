import numpy as np
import pytest

from rigidpack import default_reg, lsa_solve, plan_round, sinkhorn
from conftest import brute_force_lsa


class TestLsaSolve:
    def test_two_by_two_diagonal(self):
        sigma, cost = lsa_solve([[0.0, 1.0], [1.0, 0.0]])
        assert list(sigma) == [0, 1] and cost == 0.0

    def test_two_by_two_antidiagonal(self):
        sigma, cost = lsa_solve([[1.0, 0.0], [0.0, 1.0]])
        assert list(sigma) == [1, 0] and cost == 0.0

    def test_matches_enumeration(self, rng):
        for _ in range(100):
            C = rng.random((6, 6))
            sigma, cost = lsa_solve(C)
            oracle_perm, oracle_cost = brute_force_lsa(C)
            assert cost == oracle_cost
            assert np.array_equal(sigma, oracle_perm)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            lsa_solve([[np.inf, 0.0], [0.0, 1.0]])
        with pytest.raises(ValueError):
            lsa_solve([[np.nan, 0.0], [0.0, 1.0]])

    def test_lexicographic_tie_break(self):
        sigma, cost = lsa_solve(np.ones((4, 4)))
        assert list(sigma) == [0, 1, 2, 3] and cost == 4.0

    def test_row_column_shift_invariance(self, rng):
        C = rng.random((6, 6))
        sigma, cost = lsa_solve(C)
        C2 = C.copy()
        C2[2, :] += 3.5
        C2[:, 4] += 1.25
        sigma2, cost2 = lsa_solve(C2)
        assert np.array_equal(sigma, sigma2)
        assert cost2 == pytest.approx(cost + 3.5 + 1.25, abs=1e-9)


class TestSinkhorn:
    def test_constant_cost_gives_uniform_plan(self):
        plan = sinkhorn(np.full((5, 5), 3.0), reg=0.1)
        assert plan.converged
        assert np.abs(plan.matrix - 0.2).max() < 1e-6

    def test_marginals(self, rng):
        for _ in range(20):
            C = rng.random((7, 7)) * 5
            plan = sinkhorn(C, default_reg(C))
            assert plan.converged
            assert np.abs(plan.matrix.sum(axis=0) - 1).max() < 1e-6
            assert np.abs(plan.matrix.sum(axis=1) - 1).max() < 1e-6
            assert plan.matrix.min() >= 0.0

    def test_low_reg_two_by_two(self):
        C = np.array([[0.0, 10.0], [10.0, 0.0]])
        plan = sinkhorn(C, reg=0.01)
        assert plan.converged
        assert plan.matrix[0, 1] < 1e-3 and plan.matrix[1, 0] < 1e-3
        assert abs((plan.matrix * C).sum()) < 1e-2

    def test_reg_validation(self):
        with pytest.raises(ValueError):
            sinkhorn(np.eye(3), reg=0.0)
        with pytest.raises(ValueError):
            sinkhorn(np.eye(3), reg=-1.0)

    def test_nonconvergence_flagged(self, rng):
        C = rng.random((6, 6))
        plan = sinkhorn(C, reg=1e-4, max_iters=2)
        assert not plan.converged
        assert plan.iterations == 2

    def test_transpose_symmetry(self, rng):
        C = rng.random((6, 6)) * 4
        reg = 0.05 * np.median(C)
        a = sinkhorn(C, reg, tol=1e-12).matrix
        b = sinkhorn(C.T, reg, tol=1e-12).matrix
        assert np.abs(a - b.T).max() < 1e-9

    def test_birkhoff_bound(self, rng):
        for _ in range(20):
            C = rng.random((8, 8)) * 3
            plan = sinkhorn(C, default_reg(C))
            _, lsa_cost = lsa_solve(C)
            assert (plan.matrix * C).sum() >= lsa_cost - 1e-9

    def test_cost_decreases_with_reg_ladder(self, rng):
        # entropic cost is non-increasing as the regularization shrinks
        # and approaches the exact assignment cost; centers are kept
        # separated so the optimal matching is unambiguous
        pts_g = []
        while len(pts_g) < 17:
            c = rng.uniform(-10, 10, 3)
            if all(np.linalg.norm(c - o) > 4.0 for o in pts_g):
                pts_g.append(c)
        pts_g = np.array(pts_g)
        pts_p = pts_g[rng.permutation(17)] + rng.normal(scale=0.3, size=(17, 3))
        C = ((pts_g[:, None, :] - pts_p[None, :, :]) ** 2).sum(-1)
        med = np.median(C)
        _, lsa_cost = lsa_solve(C)
        values = []
        for frac in (0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001):
            plan = sinkhorn(C, frac * med, tol=1e-10)
            assert plan.converged
            values.append((plan.matrix * C).sum())
        for earlier, later in zip(values, values[1:]):
            assert later <= earlier + 1e-9
        assert abs(values[-1] - lsa_cost) <= 1e-6 * (1 + abs(lsa_cost))


class TestPlanRound:
    def test_near_permutation_plan(self):
        P = np.array([[0.99, 0.01, 0.0], [0.01, 0.0, 0.99], [0.0, 0.99, 0.01]])
        plan = sinkhorn(np.zeros((3, 3)) + 1.0, reg=1.0)  # placeholder for dataclass shape
        plan = type(plan)(matrix=P, reg=1.0, iterations=0, converged=True)
        assert list(plan_round(plan)) == [0, 2, 1]

    def test_uniform_plan_rounds_to_identity(self):
        plan = sinkhorn(np.full((4, 4), 2.0), reg=0.5)
        assert list(plan_round(plan)) == [0, 1, 2, 3]

    def test_low_reg_plan_matches_lsa(self, rng):
        # the plan need not be fully converged for the rounding to land
        # on the exact optimum, so cap the iterations for speed
        hits = 0
        for _ in range(100):
            C = rng.random((5, 5))
            sigma_exact, _ = lsa_solve(C)
            plan = sinkhorn(C, 1e-3 * np.median(C), max_iters=200)
            if np.array_equal(plan_round(plan), sigma_exact):
                hits += 1
        assert hits >= 95


class TestDefaultReg:
    def test_all_ones(self):
        assert default_reg(np.ones((3, 3))) == pytest.approx(0.05)

    def test_median_rule(self):
        C = np.array([[4.0, 4.0], [4.0, 4.0]])
        assert default_reg(C) == pytest.approx(0.2)

    def test_zero_matrix_fallback(self):
        assert default_reg(np.zeros((3, 3))) == pytest.approx(5e-14)
