"""Command-line front end: `mflq solve|simulate|alm|verify|example`.

Exit codes: 0 ok, 1 parse error, 2 validation, 3 numerical failure,
4 verification failure.
"""
import argparse
import json
import logging
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Any, Callable, NoReturn

import numpy as np

from mflq.control.policy import build_policy, expected_trajectory, optimal_cost
from mflq.control.riccati import p_form_deviation, solve, solve_p_form
from mflq.control.verification import run_battery
from mflq.core.errors import InvalidRequest, MflqError, ProblemFormatError, ValidationFailed, VerificationFailed
from mflq.core.models import InitialMoments, SolverConfig
from mflq.core.validation import validate_problem
from mflq.finance.alm import (
    AlmRiccati,
    alm_from_returns,
    alm_optimal_value,
    centered_gains,
    expected_terminal_equity,
    solve_alm_riccati,
    validate_alm,
)
from mflq.io.problem_io import alm_from_dict, load_returns_csv, problem_from_dict, read_document
from mflq.io.reports import (
    RunReport,
    digest,
    format_table,
    pform_to_dict,
    policy_to_dict,
    riccati_to_dict,
    sequence_table,
    simulation_to_dict,
    validation_to_dict,
)
from mflq.simulation.monte_carlo import simulate_closed_loop
from mflq.simulation.noise import KINDS, InitialSampler, NoiseSampler
from mflq.utils.instances import MISQUOTED_OY_0, REFERENCE_GAIN_TABLE, REFERENCE_S_TABLE, reference_alm_example

logger = logging.getLogger("mflq")

BUNDLED_PREFIX = "bundled:"


def bundled_path(name: str) -> Path:
    """Path of a problem file shipped in mflq/data."""
    return Path(str(resources.files("mflq.data").joinpath(name)))


def resolve_input(arg: str) -> Path:
    if arg.startswith(BUNDLED_PREFIX):
        name = arg[len(BUNDLED_PREFIX):]
        return bundled_path(name if name.endswith(".json") else name + ".json")
    return Path(arg)


def _alm_riccati_dict(ric: AlmRiccati) -> dict[str, Any]:
    return {name: getattr(ric, name) for name in ("Sx", "Tx", "Sxy", "Txy", "Sy", "Ty", "W1", "W2", "H1", "H2", "H3", "H4")}


class MainController:
    """Runs one CLI command and turns library results into reports and tables."""

    def __init__(self, config: SolverConfig, progress: bool = False) -> None:
        self.config = config
        self.progress = progress
        self._clock: dict[str, float] = {}

    def _timed(self, label: str, fn: Callable[[], Any]) -> Any:
        start = time.perf_counter()
        out = fn()
        self._clock[label] = time.perf_counter() - start
        return out

    def _finish(self, report: RunReport, args: argparse.Namespace) -> None:
        if getattr(args, "timings", False):
            report.timings = dict(self._clock)
        out = getattr(args, "out", None)
        if out:
            report.write(out)
            logger.info("report written to %s", out)

    def _require_valid(self, spec, report: RunReport, args: argparse.Namespace) -> None:
        verdict = validate_problem(spec, self.config)
        report.outputs["validation"] = validation_to_dict(verdict)
        if not verdict.ok:
            for v in verdict.violations:
                print(f"violation: {v.condition} at k={v.k} (lambda_min={v.lambda_min:.6g})")
            self._finish(report, args)
            raise ValidationFailed(verdict)

    def cmd_solve(self, args: argparse.Namespace) -> int:
        doc, raw = read_document(resolve_input(args.problem))
        spec, initial = problem_from_dict(doc)
        report = RunReport("solve", digest(raw))
        self._require_valid(spec, report, args)

        ric = self._timed("riccati", lambda: solve(spec, self.config))
        policy = build_policy(ric, self.config.pd_rel_tol)
        init = initial or InitialMoments.standard(spec.state_dim)
        traj = expected_trajectory(spec, ric, init.mean_x, init.mean_y)
        report.outputs.update({
            "riccati": riccati_to_dict(ric),
            "policy": policy_to_dict(policy),
            "optimal_cost": optimal_cost(ric, init),
            "expected_x": traj.Ex, "expected_y": traj.Ey, "expected_u": traj.Eu,
        })
        print(sequence_table({name: getattr(ric, name) for name in ("Sx", "Tx", "Sxy", "Txy", "Sy", "Ty")}))
        print(f"optimal cost: {report.outputs['optimal_cost']:.6g}")
        if args.p_form:
            pform = self._timed("p_form", lambda: solve_p_form(spec, self.config))
            report.outputs["p_form"] = pform_to_dict(pform)
            report.outputs["p_form_deviation"] = p_form_deviation(ric, pform)
            print(f"P-form vs S/T max relative deviation: {report.outputs['p_form_deviation']:.3e}")
        self._finish(report, args)
        return 0

    def cmd_simulate(self, args: argparse.Namespace) -> int:
        if args.ci and args.seed is None:
            raise InvalidRequest("--seed is required with --ci")
        if args.paths < 2:
            raise InvalidRequest(f"--paths must be at least 2, got {args.paths}")
        seed = args.seed
        if seed is None:
            seed = int(np.random.SeedSequence().entropy % (2**63))
            logger.warning("no --seed given; using %d", seed)
        doc, raw = read_document(resolve_input(args.problem))
        spec, initial = problem_from_dict(doc)
        report = RunReport("simulate", digest(raw))
        self._require_valid(spec, report, args)

        ric = solve(spec, self.config)
        policy = build_policy(ric, self.config.pd_rel_tol)
        init = initial or InitialMoments.standard(spec.state_dim)
        result = self._timed("simulate", lambda: simulate_closed_loop(
            spec, policy, InitialSampler(init, args.sampler), NoiseSampler.for_problem(spec, args.sampler),
            args.paths, seed, population_coupling=args.population_coupling, config=self.config,
            progress=self.progress,
        ))
        stats = simulation_to_dict(result, optimal_cost(ric, init))
        stats["sampler"] = args.sampler
        report.outputs["simulation"] = stats
        print(format_table(
            ["paths", "cost_mean", "std_err", "optimal", "z"],
            [[result.n_paths, result.cost_mean, result.cost_std_err, stats["optimal_cost"], stats["z_score"]]],
        ))
        self._finish(report, args)
        return 0

    def cmd_alm(self, args: argparse.Namespace) -> int:
        if args.returns:
            returns = load_returns_csv(args.returns)
            raw = Path(args.returns).read_bytes()
            alm = alm_from_returns(
                returns, args.horizon, risk_free=args.risk_free,
                liability_growth=args.liability_growth, risk_aversion=args.risk_aversion,
                q_N=args.q_terminal, q_bar_N=args.q_bar_terminal, pooled=args.pooled,
            )
            initial = None
        elif args.alm_file:
            doc, raw = read_document(resolve_input(args.alm_file))
            alm, initial = alm_from_dict(doc)
        else:
            raise InvalidRequest("give an ALM problem file or --returns")
        report = RunReport("alm", digest(raw))
        verdict = validate_alm(alm, self.config)
        report.outputs["validation"] = validation_to_dict(verdict)
        if not verdict.ok:
            self._finish(report, args)
            raise ValidationFailed(verdict)

        ric = self._timed("riccati", lambda: solve_alm_riccati(alm, self.config))
        ox, ox_bar, oy, oy_bar = centered_gains(ric, self.config)
        init = initial or InitialMoments.standard(1)
        report.outputs.update({
            "riccati": _alm_riccati_dict(ric),
            "gains": {"Ox": ox, "Ox_bar": ox_bar, "Oy": oy, "Oy_bar": oy_bar},
            "mean_excess": alm.mean_excess, "cov_excess": alm.cov_excess,
            "optimal_value": alm_optimal_value(ric, init),
            "expected_terminal_equity": expected_terminal_equity(alm, ric, init.mean_x[0], init.mean_y[0], self.config),
        })
        print(sequence_table({name: getattr(ric, name) for name in ("Sx", "Tx", "Sxy", "Txy", "Sy", "Ty")}))
        rows = [[k, name, *row] for name, gains in (("Ox", ox), ("Oy", oy)) for k, row in enumerate(gains)]
        print(format_table(["k", "gain", *(f"asset{i}" for i in range(alm.asset_count))], rows))
        print(f"optimal value: {report.outputs['optimal_value']:.6g}")
        print(f"expected terminal equity: {report.outputs['expected_terminal_equity']:.6g}")
        self._finish(report, args)
        return 0

    def cmd_verify(self, args: argparse.Namespace) -> int:
        try:
            dims = tuple(int(v) for v in args.max_dims.split(","))
        except ValueError:
            raise InvalidRequest(f"--max-dims must look like 'n,m,N', got {args.max_dims!r}") from None
        if len(dims) != 3 or min(dims) < 1:
            raise InvalidRequest(f"--max-dims must be three positive integers, got {args.max_dims!r}")
        report = RunReport("verify", digest(json.dumps(
            {"instances": args.instances, "seed": args.seed, "max_dims": dims,
             "printed_boundary": args.printed_boundary}, sort_keys=True).encode()))
        try:
            summary = self._timed("battery", lambda: run_battery(
                args.instances, args.seed, dims, printed_boundary=args.printed_boundary,
                config=self.config, progress=self.progress,
            ))
        except VerificationFailed as e:
            failure: dict[str, Any] = {"check": e.check, "message": str(e)}
            if e.instance is not None:
                path = Path(args.failure_dir) / f"mflq-failure-{e.check}.json"
                path.write_text(json.dumps(e.instance, indent=1) + "\n")
                failure["instance_file"] = str(path)
            report.outputs["failure"] = failure
            print(f"FAILED {e}")
            self._finish(report, args)
            raise
        report.outputs.update(summary.to_dict())
        print(format_table(["check", "worst residual"], sorted(summary.worst.items())))
        print(f"{summary.instances} instance(s) passed")
        self._finish(report, args)
        return 0

    def cmd_example(self, args: argparse.Namespace) -> int:
        alm = reference_alm_example()
        ric = solve_alm_riccati(alm, self.config)
        ox, _, oy, _ = centered_gains(ric, self.config)
        rows: list[list[Any]] = []
        for name, ref in REFERENCE_S_TABLE.items():
            for k, ref_val in enumerate(ref):
                val = float(getattr(ric, name)[k])
                rows.append([name, k, val, ref_val, abs(val - ref_val)])
        for name, val_rows in (("Ox", ox), ("Oy", oy)):
            for k, ref_row in enumerate(REFERENCE_GAIN_TABLE[name]):
                for i, ref_val in enumerate(ref_row):
                    val = float(val_rows[k][i])
                    rows.append([f"{name}[{i}]", k, val, ref_val, abs(val - ref_val)])
        for name in ("Tx", "Txy", "Ty"):
            for k, val in enumerate(getattr(ric, name)):
                rows.append([name, k, float(val), 0.0, abs(float(val))])
        print(format_table(["quantity", "k", "computed", "reference", "abs error"], rows))
        print(f"note: Oy_0 is often quoted as {MISQUOTED_OY_0}, which is inconsistent with Sxy_1 / Sx_1")
        report = RunReport("example", None, {
            "riccati": _alm_riccati_dict(ric),
            "gains": {"Ox": ox, "Oy": oy},
            "max_abs_error": max(r[4] for r in rows),
            "errata": {"Oy_0": {"quoted": list(MISQUOTED_OY_0), "computed": oy[0]}},
        })
        self._finish(report, args)
        return 0


class _Parser(argparse.ArgumentParser):
    """Usage errors share the exit status of unreadable input."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(ProblemFormatError.exit_code, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mflq", description="Mean-field LQ optimal control solver")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="errors only, no progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_out(p: argparse.ArgumentParser, flag: str = "--out") -> None:
        p.add_argument(flag, dest="out", help="write the JSON report to this path")
        p.add_argument("--timings", action="store_true", help="include wall-clock timings in the report")

    p = sub.add_parser("solve", help="solve the Riccati equations of a problem file")
    p.add_argument("problem", help="JSON problem file, or bundled:<name>")
    p.add_argument("--p-form", action="store_true", help="also run the multiplier (P-form) sweep")
    add_out(p)
    p.set_defaults(handler=MainController.cmd_solve)

    p = sub.add_parser("simulate", help="Monte Carlo evaluation of the optimal policy")
    p.add_argument("problem")
    p.add_argument("--paths", type=int, default=SolverConfig().n_paths)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sampler", choices=KINDS, default=SolverConfig().sampler)
    p.add_argument("--population-coupling", action="store_true",
                   help="use cross-path averages for the mean-field terms")
    p.add_argument("--ci", action="store_true", help="require an explicit --seed")
    add_out(p)
    p.set_defaults(handler=MainController.cmd_simulate)

    p = sub.add_parser("alm", help="asset-liability management problem")
    p.add_argument("alm_file", nargs="?", help="JSON ALM problem file, or bundled:<name>")
    p.add_argument("--returns", help="CSV of historical excess returns (rows: periods, columns: assets)")
    p.add_argument("--horizon", type=int, default=3)
    p.add_argument("--risk-free", type=float, default=1.0)
    p.add_argument("--liability-growth", type=float, default=1.0)
    p.add_argument("--risk-aversion", type=float, default=1.0)
    p.add_argument("--q-terminal", type=float, default=1.0)
    p.add_argument("--q-bar-terminal", type=float, default=0.0)
    p.add_argument("--pooled", action="store_true", help="estimate one set of moments from all rows")
    add_out(p, "--report")
    p.set_defaults(handler=MainController.cmd_alm)

    p = sub.add_parser("verify", help="run the randomized invariant battery")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-dims", default="4,4,8", help="n,m,N upper bounds")
    p.add_argument("--printed-boundary", action="store_true",
                   help="use Pxy_bar_N = -Q_N in the P-form sweep")
    p.add_argument("--failure-dir", default=".", help="where a failing instance is written")
    add_out(p)
    p.set_defaults(handler=MainController.cmd_verify)

    p = sub.add_parser("example", help="reproduce the three-period ALM reference example")
    add_out(p)
    p.set_defaults(handler=MainController.cmd_example)
    return parser


def cli(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.ERROR if args.quiet else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    controller = MainController(SolverConfig.from_env(), progress=not args.quiet and sys.stderr.isatty())
    try:
        return args.handler(controller, args)
    except MflqError as e:
        logger.error("%s", e)
        return e.exit_code


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
