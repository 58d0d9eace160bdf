import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from mflq.core.errors import DimensionMismatch, InvalidMoment, ProblemFormatError
from mflq.core.models import InitialMoments, ProblemSpec, lift_problem
from mflq.core.validation import validate_problem
from mflq.io.problem_io import alm_to_dict, dump_alm, dump_problem, load_alm, load_problem, problem_to_dict
from mflq.main import bundled_path
from mflq.utils.instances import random_problem, reference_alm_example

from tests.helpers import scalar_problem


class TestValidation(unittest.TestCase):
    def test_reference_alm_lift_is_valid(self):
        spec, _ = load_problem(bundled_path("alm_example_lifted.json"))
        self.assertTrue(validate_problem(spec).ok)

    def test_zero_state_weight_is_valid(self):
        spec = scalar_problem(q=0.0)
        self.assertTrue(validate_problem(spec).ok)

    def test_negative_control_weight_is_reported(self):
        spec = scalar_problem(N=2, R=np.stack([-np.eye(1), np.eye(1)]))
        report = validate_problem(spec)
        self.assertFalse(report.ok)
        conditions = {(v.condition, v.k) for v in report.violations}
        self.assertIn(("R_pd", 0), conditions)
        self.assertNotIn(("R_pd", 1), conditions)
        self.assertLess(report.violations[0].lambda_min, 0.0)

    def test_zero_control_weight_is_not_positive(self):
        report = validate_problem(scalar_problem(r=0.0))
        self.assertIn("R_pd", [v.condition for v in report.violations])

    def test_validation_is_pure(self):
        spec = random_problem(np.random.default_rng(3), 3, 2, 4)
        self.assertEqual(validate_problem(spec), validate_problem(spec))

    def test_lift_preserves_verdict(self):
        rng = np.random.default_rng(11)
        good = random_problem(rng, 2, 2, 3)
        bad = scalar_problem(R=-np.ones((1, 1, 1)))
        for spec in (good, bad):
            lifted = lift_problem(spec)
            self.assertEqual(validate_problem(spec).ok, validate_problem(lifted).ok)
            np.testing.assert_array_equal(lifted.gamma[:, 0, 0], spec.rho)
            np.testing.assert_array_equal(lifted.alpha, np.ones((spec.horizon, 1, 1)))


class TestProblemSpec(unittest.TestCase):
    def test_rho_out_of_range(self):
        with self.assertRaises(InvalidMoment):
            scalar_problem(rho=1.5)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionMismatch):
            scalar_problem(A=np.ones((2, 1, 1)))

    def test_asymmetric_weight_is_symmetrized_with_warning(self):
        Q = np.array([[[1.0, 0.2], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]])
        zeros = np.zeros((1, 2, 2))
        with self.assertLogs("mflq.core.models", level="WARNING"):
            spec = ProblemSpec(
                horizon=1, state_dim=2, control_dim=2,
                A=zeros, A_bar=zeros, B=zeros, B_bar=zeros, C=zeros, C_bar=zeros, D=zeros, D_bar=zeros,
                F=zeros, F_bar=zeros, G=zeros, G_bar=zeros, Q=Q, Q_bar=np.zeros((2, 2, 2)),
                R=np.eye(2)[None], R_bar=zeros,
            )
        np.testing.assert_array_equal(spec.Q[0], [[1.0, 0.1], [0.1, 1.0]])

    def test_arrays_are_read_only(self):
        spec = scalar_problem()
        with self.assertRaises(ValueError):
            spec.A[0, 0, 0] = 2.0


class TestProblemFiles(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_is_bit_exact(self):
        spec = random_problem(np.random.default_rng(5), 3, 2, 4)
        init = InitialMoments.standard(3)
        path = self.dir / "p.json"
        dump_problem(spec, path, init)
        loaded, loaded_init = load_problem(path)
        for name in ProblemSpec.STATE_MATRICES + ProblemSpec.CONTROL_MATRICES + ProblemSpec.WEIGHTS:
            np.testing.assert_array_equal(getattr(loaded, name), getattr(spec, name))
        self.assertEqual(loaded.rho, spec.rho)
        np.testing.assert_array_equal(loaded_init.cov_x, init.cov_x)
        self.assertEqual(problem_to_dict(loaded, loaded_init), problem_to_dict(spec, init))

    def test_unknown_key_rejected(self):
        doc = problem_to_dict(scalar_problem())
        doc["extra"] = 1
        path = self.dir / "p.json"
        path.write_text(json.dumps(doc))
        with self.assertRaisesRegex(ProblemFormatError, "extra"):
            load_problem(path)

    def test_scalar_keys_reject_arrays(self):
        doc = alm_to_dict(reference_alm_example())
        doc["q_bar_N"] = [-1.0]
        path = self.dir / "alm.json"
        path.write_text(json.dumps(doc))
        with self.assertRaisesRegex(ProblemFormatError, "q_bar_N must be a number"):
            load_alm(path)

    def test_malformed_json_reports_position(self):
        path = self.dir / "bad.json"
        path.write_text('{"horizon": 1,\n "A": [[[1.0]]\n')
        with self.assertRaisesRegex(ProblemFormatError, "line 3"):
            load_problem(path)

    def test_non_finite_rejected(self):
        doc = json.dumps(problem_to_dict(scalar_problem())).replace('"rho": 0.0', '"rho": NaN')
        path = self.dir / "nan.json"
        path.write_text(doc)
        with self.assertRaises(ProblemFormatError):
            load_problem(path)

    def test_wrong_shape_in_file(self):
        doc = problem_to_dict(scalar_problem())
        doc["B"] = [[[1.0, 2.0]]]
        path = self.dir / "shape.json"
        path.write_text(json.dumps(doc))
        with self.assertRaises(DimensionMismatch):
            load_problem(path)

    def test_alm_round_trip(self):
        alm = reference_alm_example()
        path = self.dir / "alm.json"
        dump_alm(alm, path, InitialMoments.deterministic([1.0], [0.5]))
        loaded, init = load_alm(path)
        np.testing.assert_array_equal(loaded.cov_excess, alm.cov_excess)
        np.testing.assert_array_equal(loaded.mean_excess, alm.mean_excess)
        self.assertEqual((loaded.q_N, loaded.q_bar_N), (1.0, -1.0))
        np.testing.assert_array_equal(init.mean_y, [0.5])

    def test_bundled_alm_has_standard_initial_moments(self):
        _, init = load_alm(bundled_path("alm_example.json"))
        np.testing.assert_array_equal(init.cov_x, [[1.0]])
        np.testing.assert_array_equal(init.cov_xy, [[0.0]])

    def test_missing_file(self):
        with self.assertRaises(ProblemFormatError):
            load_problem(self.dir / "absent.json")


if __name__ == '__main__':
    unittest.main()
