import io
import json
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

import numpy as np

from mflq.io.problem_io import dump_problem, problem_to_dict
from mflq.io.reports import z_score
from mflq.main import cli, resolve_input
from mflq.utils.instances import REFERENCE_GAIN_TABLE, REFERENCE_S_TABLE

from tests.helpers import scalar_problem


def run(*argv: str) -> tuple[int, str]:
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = cli(["-q", *argv])
    return code, buf.getvalue()


class TestCli(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def report(self, name: str) -> dict:
        return json.loads((self.dir / name).read_text())

    def test_example(self):
        code, out = run("example", "--out", str(self.dir / "ex.json"))
        self.assertEqual(code, 0)
        self.assertIn("abs error", out)
        doc = self.report("ex.json")
        self.assertEqual(doc["command"], "example")
        self.assertLess(doc["outputs"]["max_abs_error"], 1e-4)
        errata = doc["outputs"]["errata"]["Oy_0"]
        np.testing.assert_allclose(errata["computed"], REFERENCE_GAIN_TABLE["Oy"][0], atol=1e-4)
        self.assertNotEqual(errata["quoted"], list(REFERENCE_GAIN_TABLE["Oy"][0]))
        self.assertNotIn("timings", doc)

    def test_solve_bundled(self):
        code, _ = run("solve", "bundled:alm_example_lifted", "--p-form", "--out", str(self.dir / "s.json"))
        self.assertEqual(code, 0)
        doc = self.report("s.json")
        self.assertTrue(doc["input_digest"].startswith("sha256:"))
        Sx = np.array(doc["outputs"]["riccati"]["Sx"])[:, 0, 0]
        np.testing.assert_allclose(Sx, REFERENCE_S_TABLE["Sx"], atol=1e-4)
        self.assertLess(doc["outputs"]["p_form_deviation"], 1e-9)
        self.assertTrue(doc["outputs"]["validation"]["ok"])

    def test_timings_only_on_request(self):
        run("solve", "bundled:alm_example_lifted", "--timings", "--out", str(self.dir / "t.json"))
        self.assertIn("riccati", self.report("t.json")["timings"])

    def test_malformed_json(self):
        path = self.dir / "bad.json"
        path.write_text("{\"horizon\": 1,")
        self.assertEqual(run("solve", str(path))[0], 1)

    def test_non_scalar_rho(self):
        doc = problem_to_dict(scalar_problem())
        doc["rho"] = [[0.1, 0.2]]
        path = self.dir / "rho.json"
        path.write_text(json.dumps(doc))
        self.assertEqual(run("solve", str(path))[0], 1)

    def test_missing_bundled_file(self):
        self.assertEqual(run("solve", "bundled:no_such_problem")[0], 1)
        self.assertEqual(resolve_input("bundled:alm_example").name, "alm_example.json")

    def test_invalid_weights(self):
        path = self.dir / "r0.json"
        dump_problem(scalar_problem(r=0.0), path)
        code, out = run("solve", str(path), "--out", str(self.dir / "r0_report.json"))
        self.assertEqual(code, 2)
        self.assertIn("R_pd", out)
        self.assertFalse(self.report("r0_report.json")["outputs"]["validation"]["ok"])

    def test_simulate_rejects_single_path(self):
        self.assertEqual(run("simulate", "bundled:alm_example_lifted", "--paths", "1", "--seed", "0")[0], 2)

    def test_simulate_ci_requires_seed(self):
        self.assertEqual(run("simulate", "bundled:alm_example_lifted", "--ci")[0], 2)

    def test_simulate_is_reproducible(self):
        outs = []
        for name in ("a.json", "b.json"):
            code, _ = run("simulate", "bundled:alm_example_lifted", "--paths", "2000", "--seed", "3",
                          "--sampler", "rademacher", "--out", str(self.dir / name))
            self.assertEqual(code, 0)
            outs.append((self.dir / name).read_bytes())
        self.assertEqual(outs[0], outs[1])
        stats = json.loads(outs[0])["outputs"]["simulation"]
        self.assertEqual(stats["seed"], 3)
        self.assertEqual(stats["sampler"], "rademacher")

    def test_alm_bundled(self):
        code, out = run("alm", "bundled:alm_example", "--report", str(self.dir / "alm.json"))
        self.assertEqual(code, 0)
        self.assertIn("expected terminal equity", out)
        gains = self.report("alm.json")["outputs"]["gains"]
        np.testing.assert_allclose(gains["Ox"], REFERENCE_GAIN_TABLE["Ox"], atol=1e-4)
        self.assertAlmostEqual(self.report("alm.json")["outputs"]["optimal_value"], 0.0530, delta=1e-4)

    def test_alm_from_returns(self):
        path = self.dir / "returns.csv"
        path.write_text("asset\n" + "\n".join(["0.05"] * 6) + "\n")
        code, _ = run("alm", "--returns", str(path), "--horizon", "3", "--report", str(self.dir / "r.json"))
        self.assertEqual(code, 0)
        outputs = self.report("r.json")["outputs"]
        np.testing.assert_allclose(outputs["cov_excess"], 0.0, atol=1e-15)
        np.testing.assert_allclose(outputs["mean_excess"], 0.05, atol=1e-15)

    def test_alm_needs_input(self):
        self.assertEqual(run("alm")[0], 2)

    def test_verify_without_instances(self):
        code, out = run("verify", "--instances", "0")
        self.assertEqual(code, 0)
        self.assertIn("0 instance(s) passed", out)

    def test_verify_small_battery(self):
        code, _ = run("verify", "--instances", "3", "--seed", "1", "--max-dims", "3,2,4",
                      "--out", str(self.dir / "v.json"))
        self.assertEqual(code, 0)
        doc = self.report("v.json")["outputs"]
        self.assertEqual(doc["instances"], 3)
        self.assertEqual(doc["theta2_injected_flips"], 3)

    def test_verify_printed_boundary_fails(self):
        code, out = run("verify", "--instances", "2", "--printed-boundary", "--failure-dir", str(self.dir))
        self.assertEqual(code, 4)
        self.assertIn("p_form_equivalence", out)
        self.assertTrue((self.dir / "mflq-failure-p_form_equivalence.json").exists())

    def test_verify_bad_dims(self):
        self.assertEqual(run("verify", "--max-dims", "3,2")[0], 2)

    def test_usage_error_is_not_a_validation_failure(self):
        for argv in (["solve"], ["simulate", "p.json", "--paths", "many"], ["frobnicate"]):
            with redirect_stderr(io.StringIO()), self.assertRaises(SystemExit) as ctx:
                cli(argv)
            self.assertEqual(ctx.exception.code, 1)


class TestReportStats(unittest.TestCase):
    def test_z_score(self):
        self.assertEqual(z_score(1.5, 0.5, 1.0), 1.0)
        self.assertEqual(z_score(2.0, 0.0, 2.0), 0.0)
        self.assertIsNone(z_score(2.0, 0.0, 1.0))


if __name__ == '__main__':
    unittest.main()
