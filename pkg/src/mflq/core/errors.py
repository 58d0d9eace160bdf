"""Exception hierarchy shared by the solvers, the oracle and the CLI.

Every error carries the process exit status the CLI reports for it:
0 ok, 1 parse, 2 validation, 3 numerical, 4 verification.
"""
from typing import Any


class MflqError(Exception):
    """Base class for all library errors."""

    exit_code: int = 1


class ProblemFormatError(MflqError):
    """Malformed problem file, unknown key or non-finite number."""

    exit_code = 1


class DimensionMismatch(MflqError, ValueError):
    """Array shapes disagree with the declared (n, m, p, N)."""

    exit_code = 1


class InvalidRequest(MflqError, ValueError):
    """A call argument is out of its admissible range (e.g. n_paths < 2)."""

    exit_code = 2


class ValidationFailed(MflqError):
    """The standing assumptions on the weights do not hold."""

    exit_code = 2

    def __init__(self, report: Any) -> None:
        self.report = report
        lines = [f"{v.condition} at k={v.k} (lambda_min={v.lambda_min:.3e})" for v in report.violations]
        super().__init__("problem violates the solvability conditions: " + "; ".join(lines))


class InvalidMoment(MflqError):
    """A joint noise second-moment matrix is not positive semi-definite."""

    exit_code = 2

    def __init__(self, k: int | None, lambda_min: float = float("nan")) -> None:
        self.k = k
        self.lambda_min = lambda_min
        where = "all steps" if k is None else f"k={k}"
        super().__init__(f"invalid noise second moment at {where} (lambda_min={lambda_min:.3e})")


class TreeTooLarge(MflqError):
    """The scenario tree would exceed the dense-size guard."""

    exit_code = 2


class NotPositiveDefinite(MflqError):
    """A W factor is not numerically positive definite."""

    exit_code = 3

    def __init__(self, which: str, k: int, lambda_min: float) -> None:
        self.which = which
        self.k = k
        self.lambda_min = lambda_min
        super().__init__(f"{which} is not positive definite at k={k} (lambda_min={lambda_min:.3e})")


class NonFinite(MflqError):
    """A simulated state or accumulated cost overflowed."""

    exit_code = 3

    def __init__(self, path: int, k: int) -> None:
        self.path = path
        self.k = k
        super().__init__(f"non-finite state or cost on path {path} at k={k}")


class SingularTheta2(MflqError):
    """The stacked control Hessian is only semi-definite."""

    exit_code = 3

    def __init__(self, lambda_min: float) -> None:
        self.lambda_min = lambda_min
        super().__init__(f"Theta2 is not positive definite (lambda_min={lambda_min:.3e})")


class RangeViolation(MflqError):
    """The rank-one update vector does not lie in the range of M."""

    exit_code = 3

    def __init__(self, residual: float) -> None:
        self.residual = residual
        super().__init__(f"c is not in Range(M) (relative residual {residual:.3e})")


class VerificationFailed(MflqError):
    """An invariant of the verification battery failed."""

    exit_code = 4

    def __init__(self, check: str, detail: str, instance: dict | None = None) -> None:
        self.check = check
        self.instance = instance
        super().__init__(f"{check}: {detail}")
