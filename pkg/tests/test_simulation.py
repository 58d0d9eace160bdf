import unittest
from dataclasses import replace

import numpy as np

from mflq.core.errors import InvalidRequest, NonFinite
from mflq.core.models import FeedbackPolicy, InitialMoments, SolverConfig
from mflq.control.policy import build_policy, optimal_cost
from mflq.control.riccati import solve
from mflq.io.problem_io import load_problem
from mflq.main import bundled_path
from mflq.simulation.monte_carlo import estimate_cost, simulate_closed_loop
from mflq.simulation.noise import InitialSampler, NoiseSampler, four_point_law, sign_law
from mflq.utils.instances import random_problem

from tests.helpers import scalar_problem


def reference_setup():
    spec, _ = load_problem(bundled_path("alm_example_lifted.json"))
    sol = solve(spec)
    return spec, sol, build_policy(sol)


class TestSamplers(unittest.TestCase):
    def test_gaussian_scalar_moments(self):
        w, v = NoiseSampler("gaussian", 1, rho=0.3).sample(np.random.default_rng(0), 0, 10**6)
        self.assertAlmostEqual(float(w.mean()), 0.0, delta=5e-3)
        self.assertAlmostEqual(float(np.mean(w * w)), 1.0, delta=5e-3)
        self.assertAlmostEqual(float(np.mean(v * v)), 1.0, delta=5e-3)
        self.assertAlmostEqual(float(np.mean(w * v)), 0.3, delta=5e-3)

    def test_four_point_moments(self):
        sampler = NoiseSampler("rademacher", 1, rho=-0.4)
        w, v = sampler.sample(np.random.default_rng(1), 0, 10**6)
        self.assertTrue(np.all(np.abs(w) == 1.0))
        self.assertAlmostEqual(float(np.mean(w * v)), -0.4, delta=5e-3)
        law = four_point_law(-0.4)
        np.testing.assert_allclose(law.second_moment(), [[1.0, -0.4], [-0.4, 1.0]], atol=1e-15)
        np.testing.assert_allclose(law.mean(), 0.0, atol=1e-15)

    def test_multinoise_moments(self):
        spec, _, _ = reference_setup()
        for kind in ("gaussian", "rademacher"):
            w, _ = NoiseSampler.for_problem(spec, kind).sample(np.random.default_rng(2), 1, 10**6)
            np.testing.assert_allclose(w.T @ w / w.shape[0], spec.alpha[1], atol=1e-2)

    def test_sign_law_matches_moments_exactly(self):
        second = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.3], [0.0, 0.3, 0.5]])
        law = sign_law(np.array([1.0, -1.0, 0.0]), second)
        self.assertEqual(law.size, 8)
        np.testing.assert_allclose(law.mean(), [1.0, -1.0, 0.0], atol=1e-14)
        centered = law.points - law.mean()
        np.testing.assert_allclose(centered.T @ (centered * law.probs[:, None]), second, atol=1e-13)

    def test_unknown_kind(self):
        with self.assertRaises(InvalidRequest):
            NoiseSampler("uniform", 1)


class TestEstimateCost(unittest.TestCase):
    def test_constant_costs(self):
        self.assertEqual(estimate_cost([2.5, 2.5, 2.5]), (2.5, 0.0))

    def test_two_values(self):
        mean, se = estimate_cost([0.0, 2.0])
        self.assertEqual(mean, 1.0)
        self.assertAlmostEqual(se, 1.0, places=15)

    def test_too_few(self):
        with self.assertRaises(InvalidRequest):
            estimate_cost([1.0])


class TestClosedLoop(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.spec, cls.sol, cls.policy = reference_setup()
        cls.init = InitialSampler(InitialMoments.standard(1))
        cls.noise = NoiseSampler.for_problem(cls.spec, "gaussian")
        cls.optimal = optimal_cost(cls.sol, InitialMoments.standard(1))
        cls.base = simulate_closed_loop(cls.spec, cls.policy, cls.init, cls.noise, 100_000, 42)

    def test_cost_matches_optimal_value(self):
        self.assertLessEqual(abs(self.base.cost_mean - self.optimal), 3.0 * self.base.cost_std_err)

    def test_same_seed_same_costs(self):
        again = simulate_closed_loop(self.spec, self.policy, self.init, self.noise, 100_000, 42)
        np.testing.assert_array_equal(again.costs, self.base.costs)

    def test_worker_count_does_not_matter(self):
        single = simulate_closed_loop(self.spec, self.policy, self.init, self.noise, 5000, 7,
                                      config=SolverConfig(threads=1))
        many = simulate_closed_loop(self.spec, self.policy, self.init, self.noise, 5000, 7,
                                    config=SolverConfig(threads=4))
        np.testing.assert_array_equal(single.costs, many.costs)

    def test_perturbed_gain_costs_more(self):
        Kx = np.array(self.policy.Kx)
        Kx[0, 0, 0] += 0.05
        worse = simulate_closed_loop(self.spec, replace(self.policy, Kx=Kx), self.init, self.noise, 100_000, 42)
        self.assertGreater(worse.cost_mean - self.base.cost_mean, 3.0 * worse.cost_std_err)

    def test_random_perturbations_cost_more(self):
        # paired comparison on common random numbers
        rng = np.random.default_rng(3)
        for _ in range(20):
            Kx = self.policy.Kx + rng.normal(0.0, 0.05, self.policy.Kx.shape)
            Ky = self.policy.Ky + rng.normal(0.0, 0.05, self.policy.Ky.shape)
            worse = simulate_closed_loop(self.spec, replace(self.policy, Kx=Kx, Ky=Ky),
                                         self.init, self.noise, 100_000, 42)
            diff_mean, diff_se = estimate_cost(worse.costs - self.base.costs)
            self.assertGreater(diff_mean, 3.0 * diff_se)

    def test_population_coupling_is_consistent(self):
        coupled = simulate_closed_loop(self.spec, self.policy, self.init, self.noise, 100_000, 42,
                                       population_coupling=True)
        self.assertTrue(coupled.population_coupling)
        self.assertLessEqual(abs(coupled.cost_mean - self.optimal), 5.0 * coupled.cost_std_err)

    def test_paths_do_not_depend_on_path_count(self):
        small = simulate_closed_loop(self.spec, self.policy, self.init, self.noise, 1500, 42)
        large = simulate_closed_loop(self.spec, self.policy, self.init, self.noise, 2500, 42,
                                     config=SolverConfig(block_size=700))
        np.testing.assert_allclose(large.costs[:1500], small.costs, rtol=1e-12)
        np.testing.assert_allclose(large.terminal_x[:1500], small.terminal_x, rtol=1e-12)
        np.testing.assert_allclose(self.base.costs[:1500], small.costs, rtol=1e-12)

    def test_rejects_single_path(self):
        with self.assertRaises(InvalidRequest):
            simulate_closed_loop(self.spec, self.policy, self.init, self.noise, 1, 0)


class TestMeanField(unittest.TestCase):
    def test_sample_means_track_expected_trajectory(self):
        spec, sol, policy = reference_setup()
        moments = InitialMoments(mean_x=[1.0], mean_y=[0.5], cov_x=[[0.5]], cov_y=[[0.4]], cov_xy=[[0.1]])
        result = simulate_closed_loop(spec, policy, InitialSampler(moments), NoiseSampler.for_problem(spec),
                                      100_000, 5)
        for got, paths, want in ((result.mean_x[-1], result.terminal_x, result.expected.Ex[-1]),
                                 (result.mean_y[-1], result.terminal_y, result.expected.Ey[-1])):
            se = paths.std(axis=0, ddof=1) / np.sqrt(paths.shape[0])
            self.assertTrue(np.all(np.abs(got - want) <= 4.0 * se + 1e-12))


class TestDegenerateNoise(unittest.TestCase):
    def test_noise_free_paths_realize_optimal_cost(self):
        spec = random_problem(np.random.default_rng(12), 2, 2, 4)
        zeros = {name: np.zeros_like(getattr(spec, name)) for name in ("C", "C_bar", "D", "D_bar", "G", "G_bar")}
        spec = replace(spec, **zeros)
        sol = solve(spec)
        moments = InitialMoments.deterministic([1.0, -0.5], [0.3, 0.2])
        result = simulate_closed_loop(spec, build_policy(sol), InitialSampler(moments, "rademacher"),
                                      NoiseSampler.for_problem(spec, "rademacher"), 16, 0)
        expected = optimal_cost(sol, moments)
        np.testing.assert_allclose(result.costs, expected, rtol=1e-10, atol=1e-12)
        self.assertLess(result.cost_std_err, 1e-12 * (1.0 + abs(expected)))

    def _overflow_step(self, x0: float) -> int:
        spec = scalar_problem(N=3, A=np.full((3, 1, 1), 1e200))
        zero = np.zeros((3, 1, 1))
        policy = FeedbackPolicy(Kx=zero, Kx_bar=zero, Ky=zero, Ky_bar=zero)
        moments = InitialMoments.deterministic([x0], [0.0])
        with np.errstate(over="ignore", invalid="ignore"):
            with self.assertRaises(NonFinite) as ctx:
                simulate_closed_loop(spec, policy, InitialSampler(moments), NoiseSampler.for_problem(spec), 4, 0)
        return ctx.exception.k

    def test_state_overflow_is_reported(self):
        # costs stay below 1e261 while x_2 = 1e330
        self.assertEqual(self._overflow_step(x0=1e-70), 2)

    def test_cost_overflow_is_reported(self):
        # x_1 = 1e200 is finite but its squared weight is not
        self.assertEqual(self._overflow_step(x0=1.0), 1)


if __name__ == '__main__':
    unittest.main()
