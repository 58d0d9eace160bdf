"""Randomized invariant battery behind `mflq verify`."""
import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigvalsh
from tqdm import tqdm

from mflq.control.oracle import assemble_quadratic, brute_force_optimal, build_tree, check_theta2_psd, policy_gap
from mflq.control.policy import build_policy, optimal_cost
from mflq.control.riccati import p_form_deviation, solve_p_form, solve_riccati, solve_riccati_multinoise
from mflq.core.errors import VerificationFailed
from mflq.core.models import DEFAULT_CONFIG, ProblemSpec, SolverConfig, lift_problem
from mflq.finance.alm import lift_to_multinoise, solve_alm_riccati
from mflq.io.problem_io import alm_to_dict, problem_to_dict
from mflq.simulation.noise import NoiseSampler, sign_law
from mflq.utils.instances import random_alm, random_problem, random_two_point_initial
from mflq.utils.linalg import min_eigenvalue

logger = logging.getLogger(__name__)

# Largest instance the oracle is asked to solve exactly
ORACLE_DIMS = (2, 2, 3)

TOLERANCES = {
    "p_form_equivalence": 1e-9,
    "riccati_psd": 1e-9,
    "multinoise_reduction": 1e-12,
    "oracle_value": 1e-8,
    "oracle_controls": 1e-8,
    "alm_lift": 1e-12,
}


@dataclass(slots=True)
class VerificationSummary:
    instances: int = 0
    worst: dict[str, float] = field(default_factory=lambda: {name: 0.0 for name in TOLERANCES})
    theta2_psd_pass: int = 0
    theta2_injected_flips: int = 0

    def to_dict(self) -> dict:
        return {
            "instances": self.instances,
            "worst_residuals": dict(self.worst),
            "tolerances": dict(TOLERANCES),
            "theta2_psd_pass": self.theta2_psd_pass,
            "theta2_injected_flips": self.theta2_injected_flips,
        }


def _record(summary: VerificationSummary, check: str, residual: float, instance: dict) -> None:
    summary.worst[check] = max(summary.worst[check], residual)
    if not residual <= TOLERANCES[check]:
        raise VerificationFailed(check, f"residual {residual:.3e} exceeds {TOLERANCES[check]:.1e}", instance)


def _scale(arr: np.ndarray) -> float:
    return 1.0 + float(np.max(np.abs(arr)))


def negative_weight_variant(spec: ProblemSpec, margin: float) -> ProblemSpec:
    """Same problem with R_k replaced by -margin * I at every step (bypasses validation)."""
    R = np.tile(-margin * np.eye(spec.control_dim), (spec.horizon, 1, 1))
    return dataclasses.replace(spec, R=R)


def _check_solvers(summary: VerificationSummary, spec: ProblemSpec, printed_boundary: bool, config: SolverConfig) -> None:
    doc = problem_to_dict(spec)
    ric = solve_riccati(spec, config)
    pform = solve_p_form(spec, config, printed_boundary=printed_boundary)
    _record(summary, "p_form_equivalence", p_form_deviation(ric, pform), doc)

    worst_psd = 0.0
    for k in range(spec.horizon + 1):
        for S in (ric.Sx[k], ric.Tx[k]):
            worst_psd = max(worst_psd, -min_eigenvalue(S) / _scale(S))
    _record(summary, "riccati_psd", worst_psd, doc)

    lifted = solve_riccati_multinoise(lift_problem(spec), config)
    gap = max(float(np.max(np.abs(getattr(lifted, name) - getattr(ric, name)))) / _scale(getattr(ric, name))
              for name in ("Sx", "Tx", "Sxy", "Txy", "Sy", "Ty"))
    _record(summary, "multinoise_reduction", gap, doc)


def _check_oracle(summary: VerificationSummary, spec: ProblemSpec, rng: np.random.Generator, config: SolverConfig) -> None:
    doc = problem_to_dict(spec)
    init = random_two_point_initial(rng, spec.state_dim)
    noise = NoiseSampler.for_problem(spec, "rademacher")
    tree = build_tree(spec, noise, sign_law(np.concatenate([init.mean_x, init.mean_y]), init.joint_cov()), config)
    quad = assemble_quadratic(tree, spec)

    ok, lam = check_theta2_psd(quad, config)
    if not ok:
        raise VerificationFailed("theta2_psd", f"lambda_min {lam:.3e} on a validated instance", doc)
    summary.theta2_psd_pass += 1

    ric = solve_riccati(spec, config)
    best = brute_force_optimal(quad, config=config)
    expected = optimal_cost(ric, init)
    _record(summary, "oracle_value", abs(best.value - expected) / (1.0 + abs(best.value)), doc)
    _record(summary, "oracle_controls", policy_gap(quad, best.controls, build_policy(ric)), doc)

    # A control weight more negative than any node can compensate must break semi-definiteness.
    p_min = min(float(np.min(tree.probs[k])) for k in range(spec.horizon))
    lam_max = float(eigvalsh(quad.Theta2)[-1])
    bad = negative_weight_variant(spec, 1.0 + lam_max / p_min)
    flipped, _ = check_theta2_psd(assemble_quadratic(tree, bad), config)
    if flipped:
        raise VerificationFailed("theta2_injected", "negative control weight left Theta2 semi-definite", doc)
    summary.theta2_injected_flips += 1


def _check_alm(summary: VerificationSummary, rng: np.random.Generator, max_assets: int, max_horizon: int,
               config: SolverConfig) -> None:
    alm = random_alm(rng, int(rng.integers(1, max_assets + 1)), int(rng.integers(1, max_horizon + 1)))
    direct = solve_alm_riccati(alm, config)
    lifted = solve_riccati_multinoise(lift_to_multinoise(alm), config)
    gap = max(float(np.max(np.abs(getattr(lifted, name)[:, 0, 0] - getattr(direct, name)))) / _scale(getattr(direct, name))
              for name in ("Sx", "Tx", "Sxy", "Txy", "Sy", "Ty"))
    _record(summary, "alm_lift", gap, alm_to_dict(alm))


def run_battery(instances: int, seed: int, max_dims: tuple[int, int, int] = (4, 4, 8), *,
                printed_boundary: bool = False, config: SolverConfig | None = None,
                progress: bool = False) -> VerificationSummary:
    """Run every invariant on `instances` random problems; raises VerificationFailed on the first failure."""
    cfg = config or DEFAULT_CONFIG
    n_max, m_max, N_max = max_dims
    summary = VerificationSummary()
    children = np.random.SeedSequence(seed).spawn(instances) if instances > 0 else []
    for child in tqdm(children, desc="verify", unit="instance", disable=not progress):
        rng = np.random.default_rng(child)
        n, m, N = (int(rng.integers(1, hi + 1)) for hi in (n_max, m_max, N_max))
        _check_solvers(summary, random_problem(rng, n, m, N), printed_boundary, cfg)
        small = tuple(min(d, cap) for d, cap in zip((n, m, N), ORACLE_DIMS))
        _check_oracle(summary, random_problem(rng, *small), rng, cfg)
        _check_alm(summary, rng, min(m_max, 5), N_max, cfg)
        summary.instances += 1
    logger.info("verification passed on %d instance(s)", summary.instances)
    return summary
