import unittest

import numpy as np

from mflq.core.errors import InvalidRequest, NotPositiveDefinite, RangeViolation
from mflq.core.models import InitialMoments, SolverConfig
from mflq.control.policy import build_policy, expected_trajectory
from mflq.control.riccati import solve_riccati_multinoise
from mflq.finance.alm import (
    AlmProblem,
    alm_from_returns,
    alm_optimal_value,
    alm_policy,
    alm_strategy,
    centered_gains,
    expected_terminal_equity,
    lift_to_multinoise,
    moments_from_returns,
    pinv_rank_one,
    rational_sx_sequence,
    solve_alm_riccati,
    validate_alm,
)
from mflq.utils.instances import (
    MISQUOTED_OY_0,
    REFERENCE_GAIN_TABLE,
    REFERENCE_S_TABLE,
    random_alm,
    reference_alm_example,
)

from tests.helpers import rel_gap

SEQS = ("Sx", "Tx", "Sxy", "Txy", "Sy", "Ty")


def single_asset(N=1, a=1.0, f=0.0, mean=1.0, var=1.0, r=1.0, q=1.0, q_bar=0.0) -> AlmProblem:
    return AlmProblem(
        horizon=N, asset_count=1, a=np.full(N, a), f=np.full(N, f),
        mean_excess=np.full((N, 1), mean), cov_excess=np.full((N, 1, 1), var),
        R=np.full((N, 1, 1), r), q_N=q, q_bar_N=q_bar,
    )


class TestReferenceExample(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.alm = reference_alm_example()
        cls.sol = solve_alm_riccati(cls.alm)

    def test_is_valid(self):
        self.assertTrue(validate_alm(self.alm).ok)

    def test_sequences(self):
        for name, expected in REFERENCE_S_TABLE.items():
            np.testing.assert_allclose(getattr(self.sol, name), expected, rtol=0, atol=1e-4)
        for name in ("Tx", "Txy", "Ty"):
            np.testing.assert_allclose(getattr(self.sol, name), 0.0, rtol=0, atol=1e-12)

    def test_gains(self):
        ox, ox_bar, oy, oy_bar = centered_gains(self.sol)
        np.testing.assert_allclose(ox, REFERENCE_GAIN_TABLE["Ox"], rtol=0, atol=1e-4)
        np.testing.assert_allclose(oy, REFERENCE_GAIN_TABLE["Oy"], rtol=0, atol=1e-4)
        np.testing.assert_allclose(ox_bar, 0.0, atol=1e-12)
        np.testing.assert_allclose(oy_bar, 0.0, atol=1e-12)

    def test_first_y_gain_follows_from_s_table(self):
        S = REFERENCE_S_TABLE
        ratio = 0.6 * S["Sxy"][1] / (0.5 * S["Sx"][1])
        implied = ratio * np.array(REFERENCE_GAIN_TABLE["Ox"][0])
        np.testing.assert_allclose(REFERENCE_GAIN_TABLE["Oy"][0], implied, rtol=0, atol=1e-4)
        _, _, oy, _ = centered_gains(self.sol)
        self.assertGreater(np.max(np.abs(oy[0] - np.array(MISQUOTED_OY_0))), 1e-3)

    def test_strategy_on_unit_deviation(self):
        ox, _, oy, _ = centered_gains(self.sol)
        np.testing.assert_allclose(alm_strategy(self.alm, self.sol, 2, 1.0, 0.0, 0.0, 0.0), ox[2], atol=1e-15)
        np.testing.assert_allclose(alm_strategy(self.alm, self.sol, 0, 0.0, 0.0, 1.0, 0.0), oy[0], atol=1e-15)
        with self.assertRaises(InvalidRequest):
            alm_strategy(self.alm, self.sol, 3, 0.0, 0.0, 0.0, 0.0)

    def test_optimal_value(self):
        self.assertAlmostEqual(alm_optimal_value(self.sol, InitialMoments.standard(1)), 0.0530, delta=1e-4)
        self.assertEqual(alm_optimal_value(self.sol, InitialMoments.deterministic([1.0], [2.0])), 0.0)

    def test_expected_terminal_equity(self):
        self.assertAlmostEqual(expected_terminal_equity(self.alm, self.sol, 2.0, 1.5),
                               0.125 * 2.0 - 0.216 * 1.5, places=12)

    def test_expected_equity_matches_general_trajectory(self):
        spec = lift_to_multinoise(self.alm)
        traj = expected_trajectory(spec, solve_riccati_multinoise(spec), [2.0], [1.5])
        self.assertAlmostEqual(traj.Ex[-1, 0] - traj.Ey[-1, 0],
                               expected_terminal_equity(self.alm, self.sol, 2.0, 1.5), places=12)

    def test_gain_factorisation_uses_configured_threshold(self):
        strict = SolverConfig(pd_rel_tol=1.0)
        with self.assertRaises(NotPositiveDefinite):
            centered_gains(self.sol, strict)
        with self.assertRaises(NotPositiveDefinite):
            alm_policy(self.sol, strict)
        with self.assertRaises(NotPositiveDefinite):
            alm_strategy(self.alm, self.sol, 0, 1.0, 0.0, 0.0, 0.0, strict)
        with self.assertRaises(NotPositiveDefinite):
            expected_terminal_equity(self.alm, self.sol, 2.0, 1.5, strict)


class TestSmallCases(unittest.TestCase):
    def test_zero_terminal_weight(self):
        alm = reference_alm_example()
        zero = AlmProblem(alm.horizon, alm.asset_count, alm.a, alm.f, alm.mean_excess, alm.cov_excess,
                          alm.R, q_N=0.0, q_bar_N=0.0)
        sol = solve_alm_riccati(zero)
        for name in SEQS:
            np.testing.assert_array_equal(np.abs(getattr(sol, name)), 0.0)
        for gains in centered_gains(sol):
            np.testing.assert_array_equal(np.abs(gains), 0.0)

    def test_single_asset_value(self):
        sol = solve_alm_riccati(single_asset())
        self.assertAlmostEqual(sol.Sx[0], 2.0 / 3.0, places=12)

    def test_deterministic_return(self):
        sol = solve_alm_riccati(single_asset(var=0.0))
        self.assertAlmostEqual(sol.Sx[0], 0.5, places=14)

    def test_mean_term_with_zero_mean_weight(self):
        alm = random_alm(np.random.default_rng(1), 3, 4)
        alm = AlmProblem(alm.horizon, alm.asset_count, alm.a, alm.f, alm.mean_excess, alm.cov_excess,
                         alm.R, q_N=alm.q_N, q_bar_N=0.0)
        spec = lift_to_multinoise(alm)
        traj = expected_trajectory(spec, solve_riccati_multinoise(spec), [1.0], [0.7])
        self.assertAlmostEqual(expected_terminal_equity(alm, solve_alm_riccati(alm), 1.0, 0.7),
                               traj.Ex[-1, 0] - traj.Ey[-1, 0], places=12)


class TestLift(unittest.TestCase):
    def test_direct_and_lifted_sequences_agree(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            alm = random_alm(rng, int(rng.integers(1, 6)), int(rng.integers(1, 11)))
            direct = solve_alm_riccati(alm)
            lifted = solve_riccati_multinoise(lift_to_multinoise(alm))
            for name in SEQS:
                self.assertLess(rel_gap(getattr(lifted, name)[:, 0, 0], getattr(direct, name)), 1e-12, name)

    def test_gains_agree_with_lifted_policy(self):
        alm = random_alm(np.random.default_rng(3), 3, 5)
        general = build_policy(solve_riccati_multinoise(lift_to_multinoise(alm)))
        policy = alm_policy(solve_alm_riccati(alm))
        for name in ("Kx", "Kx_bar", "Ky", "Ky_bar"):
            self.assertLess(rel_gap(getattr(policy, name), getattr(general, name)), 1e-12, name)


class TestRationalForm(unittest.TestCase):
    def test_matches_recursion(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            alm = random_alm(rng, int(rng.integers(1, 6)), int(rng.integers(1, 11)))
            Sx, Tx = rational_sx_sequence(alm)
            sol = solve_alm_riccati(alm)
            self.assertLess(rel_gap(Sx, sol.Sx), 1e-12)
            self.assertLess(rel_gap(Tx, sol.Tx), 1e-12)

    def test_reference(self):
        Sx, _ = rational_sx_sequence(reference_alm_example())
        np.testing.assert_allclose(Sx, REFERENCE_S_TABLE["Sx"], rtol=0, atol=1e-4)


class TestPinvRankOne(unittest.TestCase):
    def test_identity_update(self):
        X = pinv_rank_one(np.eye(3), [1.0, 0.0, 0.0])
        np.testing.assert_allclose(X, np.diag([0.5, 1.0, 1.0]), atol=1e-15)

    def test_matches_inverse_when_nonsingular(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(1, 6))
            Z = rng.standard_normal((n, n))
            M = Z @ Z.T / n + 0.5 * np.eye(n)
            c = rng.standard_normal(n)
            np.testing.assert_allclose(pinv_rank_one(M, c), np.linalg.inv(M + np.outer(c, c)), atol=1e-10)

    def test_moore_penrose_identities_on_singular_matrix(self):
        rng = np.random.default_rng(6)
        V = np.linalg.qr(rng.standard_normal((4, 4)))[0][:, :2]
        M = V @ np.diag([2.0, 0.7]) @ V.T
        c = M @ rng.standard_normal(4)
        A = M + np.outer(c, c)
        X = pinv_rank_one(M, c)
        np.testing.assert_allclose(A @ X @ A, A, atol=1e-9)
        np.testing.assert_allclose(X @ A @ X, X, atol=1e-9)
        np.testing.assert_allclose((A @ X).T, A @ X, atol=1e-9)
        np.testing.assert_allclose((X @ A).T, X @ A, atol=1e-9)

    def test_out_of_range_update(self):
        with self.assertRaises(RangeViolation):
            pinv_rank_one(np.diag([1.0, 0.0]), [0.0, 1.0])

    def test_range_tolerance_is_configurable(self):
        M, c = np.diag([1.0, 0.0]), [1.0, 1e-6]
        with self.assertRaises(RangeViolation):
            pinv_rank_one(M, c)
        X = pinv_rank_one(M, c, SolverConfig(range_tol=1e-3))
        np.testing.assert_allclose(X, np.diag([0.5, 0.0]), atol=1e-15)

    def test_zero_update(self):
        M = np.diag([4.0, 0.0])
        np.testing.assert_allclose(pinv_rank_one(M, np.zeros(2)), np.diag([0.25, 0.0]), atol=1e-15)


class TestReturnData(unittest.TestCase):
    def test_constant_returns(self):
        mean, cov = moments_from_returns(np.full((6, 1), 0.05), 3)
        np.testing.assert_allclose(mean, 0.05, atol=1e-15)
        np.testing.assert_allclose(cov, 0.0, atol=1e-15)
        self.assertEqual(cov.shape, (3, 1, 1))

    def test_windows_and_pooling(self):
        data = np.array([[0.0, 1.0], [2.0, 1.0], [1.0, 3.0], [3.0, 5.0]])
        mean, cov = moments_from_returns(data, 2)
        np.testing.assert_allclose(mean, [[1.0, 1.0], [2.0, 4.0]])
        np.testing.assert_allclose(cov[0], [[2.0, 0.0], [0.0, 0.0]])
        pooled_mean, pooled_cov = moments_from_returns(data, 2, pooled=True)
        np.testing.assert_allclose(pooled_mean[1], data.mean(axis=0))
        np.testing.assert_allclose(pooled_cov[0], np.cov(data, rowvar=False, ddof=1))

    def test_short_window(self):
        with self.assertRaises(InvalidRequest):
            moments_from_returns(np.zeros((3, 2)), 2)

    def test_problem_from_returns(self):
        rng = np.random.default_rng(7)
        alm = alm_from_returns(rng.normal(0.05, 0.1, (40, 2)), 4, risk_free=1.01, liability_growth=1.02,
                               risk_aversion=2.0, pooled=True)
        self.assertEqual(alm.asset_count, 2)
        np.testing.assert_array_equal(alm.R[0], 2.0 * np.eye(2))
        self.assertTrue(validate_alm(alm).ok)


if __name__ == '__main__':
    unittest.main()
