"""Checks of the standing assumptions a problem must satisfy before it is solved.

Q_k and Q_k + Q-bar_k must be positive semi-definite (k = 0..N), R_k and
R_k + R-bar_k positive definite (k = 0..N-1). For multinoise problems the joint
second moment of (w_k, v_k) must be a valid (PSD) moment matrix.
"""
import logging

from mflq.core.models import (
    DEFAULT_CONFIG,
    AnyProblem,
    MultiNoiseProblemSpec,
    SolverConfig,
    ValidationReport,
    ValidationViolation,
)
from mflq.utils.linalg import is_pd, is_psd

logger = logging.getLogger(__name__)


def validate_problem(spec: AnyProblem, config: SolverConfig | None = None) -> ValidationReport:
    """Report every violated solvability condition; never raises."""
    cfg = config or DEFAULT_CONFIG
    violations: list[ValidationViolation] = []
    for k in range(spec.horizon + 1):
        ok, lam = is_psd(spec.Q[k], cfg.psd_tol)
        if not ok:
            violations.append(ValidationViolation("Q_psd", k, lam))
        ok, lam = is_psd(spec.Q[k] + spec.Q_bar[k], cfg.psd_tol)
        if not ok:
            violations.append(ValidationViolation("Q_plus_Qbar_psd", k, lam))
    for k in range(spec.horizon):
        ok, lam = is_pd(spec.R[k], cfg.pd_rel_tol)
        if not ok:
            violations.append(ValidationViolation("R_pd", k, lam))
        ok, lam = is_pd(spec.R[k] + spec.R_bar[k], cfg.pd_rel_tol)
        if not ok:
            violations.append(ValidationViolation("R_plus_Rbar_pd", k, lam))
    if isinstance(spec, MultiNoiseProblemSpec):
        violations.extend(moment_violations(spec, cfg))
    report = ValidationReport(tuple(violations))
    if not report.ok:
        logger.info("validation found %d violation(s)", len(violations))
    return report


def moment_violations(spec: MultiNoiseProblemSpec, config: SolverConfig | None = None) -> list[ValidationViolation]:
    cfg = config or DEFAULT_CONFIG
    found = []
    for k in range(spec.horizon):
        ok, lam = is_psd(spec.joint_moment(k), cfg.psd_tol)
        if not ok:
            found.append(ValidationViolation("noise_moment_psd", k, lam))
    return found
