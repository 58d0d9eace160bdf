"""
JSON problem files and return-history CSV files.

Scalar-noise problem document::

    {"horizon": N, "state_dim": n, "control_dim": m,
     "A": [[[...]]], "A_bar": ..., ..., "R_bar": ..., "rho": 0.3,
     "initial": {"mean_x": [...], "mean_y": [...], "cov_x": ..., "cov_y": ..., "cov_xy": ...}}

Matrices are row-major nested arrays, stacked over steps: A has N entries of
n x n, Q has N + 1. A multinoise document replaces "rho" with "noise_dim",
"alpha", "beta", "gamma" ((N, p, p) each) and gives C, C_bar, D, D_bar, G,
G_bar one extra channel axis after the step axis. "initial" is optional
everywhere. Unknown keys are rejected and NaN/Infinity are not accepted.

ALM document: "horizon", "asset_count", "a", "f", "mean_excess",
"cov_excess", "R", "q_N", "q_bar_N" and the optional scalar "initial".
"""
import json
import logging
from pathlib import Path
from typing import Any

import numpy as np

from mflq.core.errors import DimensionMismatch, ProblemFormatError
from mflq.core.models import AnyProblem, InitialMoments, MultiNoiseProblemSpec, ProblemSpec
from mflq.finance.alm import AlmProblem

logger = logging.getLogger(__name__)

_COMMON = ("horizon", "state_dim", "control_dim", "A", "A_bar", "B", "B_bar", "C", "C_bar", "D", "D_bar",
           "F", "F_bar", "G", "G_bar", "Q", "Q_bar", "R", "R_bar")
SCALAR_KEYS = frozenset(_COMMON + ("rho",))
MULTINOISE_KEYS = frozenset(_COMMON + ("noise_dim", "alpha", "beta", "gamma"))
ALM_KEYS = frozenset(("horizon", "asset_count", "a", "f", "mean_excess", "cov_excess", "R", "q_N", "q_bar_N"))
INITIAL_KEYS = frozenset(("mean_x", "mean_y", "cov_x", "cov_y", "cov_xy"))
_INTEGER_KEYS = frozenset(("horizon", "state_dim", "control_dim", "noise_dim", "asset_count"))
_SCALAR_KEYS = frozenset(("rho", "q_N", "q_bar_N"))


def _reject_constant(token: str) -> Any:
    raise ProblemFormatError(f"non-finite number {token} is not allowed")


def read_document(path: str | Path) -> tuple[dict[str, Any], bytes]:
    """Parse a JSON object, returning it with the raw bytes for digesting."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise ProblemFormatError(f"{path}: {e.strerror}") from None
    try:
        doc = json.loads(raw.decode("utf-8"), parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise ProblemFormatError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    except UnicodeDecodeError as e:
        raise ProblemFormatError(f"{path}: not UTF-8 ({e.reason})") from None
    if not isinstance(doc, dict):
        raise ProblemFormatError(f"{path}: top level must be a JSON object")
    return doc, raw


def _check_keys(doc: dict[str, Any], allowed: frozenset[str], what: str, optional: frozenset[str] = frozenset()) -> None:
    unknown = sorted(set(doc) - allowed - optional)
    if unknown:
        raise ProblemFormatError(f"unknown key(s) in {what}: {', '.join(unknown)}")
    missing = sorted(allowed - set(doc))
    if missing:
        raise ProblemFormatError(f"missing key(s) in {what}: {', '.join(missing)}")


def _fields(doc: dict[str, Any], keys: frozenset[str]) -> dict[str, Any]:
    out = {}
    for key in keys:
        value = doc[key]
        if key in _INTEGER_KEYS:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ProblemFormatError(f"{key} must be an integer, got {value!r}")
            out[key] = value
            continue
        try:
            out[key] = np.array(value, dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise ProblemFormatError(f"{key} is not a numeric array: {e}") from None
        if key in _SCALAR_KEYS:
            if out[key].ndim != 0:
                raise ProblemFormatError(f"{key} must be a number, got an array of shape {out[key].shape}")
            out[key] = float(out[key])
    return out


def initial_from_dict(doc: dict[str, Any]) -> InitialMoments:
    if not isinstance(doc, dict):
        raise ProblemFormatError("initial must be a JSON object")
    _check_keys(doc, INITIAL_KEYS, "initial")
    return InitialMoments(**_fields(doc, INITIAL_KEYS))


def initial_to_dict(init: InitialMoments) -> dict[str, Any]:
    return {name: getattr(init, name).tolist() for name in sorted(INITIAL_KEYS)}


def problem_from_dict(doc: dict[str, Any]) -> tuple[AnyProblem, InitialMoments | None]:
    multinoise = "noise_dim" in doc
    keys = MULTINOISE_KEYS if multinoise else SCALAR_KEYS
    _check_keys(doc, keys, "problem", optional=frozenset({"initial"}))
    values = _fields(doc, keys)
    if multinoise:
        spec: AnyProblem = MultiNoiseProblemSpec(**values)
    else:
        spec = ProblemSpec(**values)
    initial = initial_from_dict(doc["initial"]) if "initial" in doc else None
    if initial is not None and initial.dim != spec.state_dim:
        raise DimensionMismatch(f"initial moments have dimension {initial.dim}, expected {spec.state_dim}")
    return spec, initial


def problem_to_dict(spec: AnyProblem, initial: InitialMoments | None = None) -> dict[str, Any]:
    keys = MULTINOISE_KEYS if isinstance(spec, MultiNoiseProblemSpec) else SCALAR_KEYS
    doc: dict[str, Any] = {}
    for key in sorted(keys):
        value = getattr(spec, key)
        doc[key] = value.tolist() if isinstance(value, np.ndarray) else value
    if initial is not None:
        doc["initial"] = initial_to_dict(initial)
    return doc


def load_problem(path: str | Path) -> tuple[AnyProblem, InitialMoments | None]:
    doc, _ = read_document(path)
    spec, initial = problem_from_dict(doc)
    logger.info("loaded %s problem from %s", type(spec).__name__, path)
    return spec, initial


def dump_problem(spec: AnyProblem, path: str | Path, initial: InitialMoments | None = None) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(spec, initial), indent=1) + "\n")


def alm_from_dict(doc: dict[str, Any]) -> tuple[AlmProblem, InitialMoments | None]:
    _check_keys(doc, ALM_KEYS, "ALM problem", optional=frozenset({"initial"}))
    values = _fields(doc, ALM_KEYS)
    alm = AlmProblem(**values)
    initial = initial_from_dict(doc["initial"]) if "initial" in doc else None
    if initial is not None and initial.dim != 1:
        raise DimensionMismatch("ALM initial moments must be scalar")
    return alm, initial


def alm_to_dict(alm: AlmProblem, initial: InitialMoments | None = None) -> dict[str, Any]:
    doc: dict[str, Any] = {}
    for key in sorted(ALM_KEYS):
        value = getattr(alm, key)
        doc[key] = value.tolist() if isinstance(value, np.ndarray) else value
    if initial is not None:
        doc["initial"] = initial_to_dict(initial)
    return doc


def load_alm(path: str | Path) -> tuple[AlmProblem, InitialMoments | None]:
    doc, _ = read_document(path)
    return alm_from_dict(doc)


def dump_alm(alm: AlmProblem, path: str | Path, initial: InitialMoments | None = None) -> None:
    Path(path).write_text(json.dumps(alm_to_dict(alm, initial), indent=1) + "\n")


def load_returns_csv(path: str | Path) -> np.ndarray:
    """Excess returns, one row per period and one column per asset; an optional header row is skipped."""
    try:
        data = np.genfromtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except (OSError, ValueError) as e:
        raise ProblemFormatError(f"{path}: {e}") from None
    if data.size and np.all(np.isnan(data[0])):
        data = data[1:]
    if data.size == 0:
        raise ProblemFormatError(f"{path}: no return rows")
    if not np.all(np.isfinite(data)):
        row = int(np.argwhere(~np.isfinite(data))[0, 0])
        raise ProblemFormatError(f"{path}: non-numeric or non-finite value in data row {row + 1}")
    return data
