"""Machine-readable run reports and the human-readable tables printed by the CLI."""
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from mflq.core.models import FeedbackPolicy, PFormSolution, RiccatiSolution, SimulationResult, ValidationReport

SCHEMA_VERSION = 1


def digest(raw: bytes) -> str:
    return "sha256:" + hashlib.sha256(raw).hexdigest()


@dataclass(slots=True)
class RunReport:
    """One CLI run: what was read, what was computed and, on request, how long it took."""
    command: str
    input_digest: str | None = None
    outputs: dict[str, Any] = field(default_factory=dict)
    timings: dict[str, float] | None = None

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "input_digest": self.input_digest,
            "outputs": self.outputs,
        }
        if self.timings is not None:
            doc["timings"] = self.timings
        return doc

    def to_json(self) -> str:
        return json.dumps(_plain(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


def _plain(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def riccati_to_dict(sol: RiccatiSolution) -> dict[str, Any]:
    return {name: getattr(sol, name) for name in ("Sx", "Tx", "Sxy", "Txy", "Sy", "Ty", "W1", "W2", "H1", "H2", "H3", "H4")}


def pform_to_dict(sol: PFormSolution) -> dict[str, Any]:
    return {name: getattr(sol, name)
            for name in ("Px", "Px_bar", "Pxy", "Pxy_bar", "Py", "Py_bar", "Lx", "Lx_bar", "Ly", "Ly_bar")}


def policy_to_dict(policy: FeedbackPolicy) -> dict[str, Any]:
    return {"Kx": policy.Kx, "Kx_bar": policy.Kx_bar, "Ky": policy.Ky, "Ky_bar": policy.Ky_bar}


def z_score(mean: float, std_err: float, target: float) -> float | None:
    """(mean - target) / std_err; None when a zero standard error meets a nonzero gap."""
    if std_err > 0:
        return (mean - target) / std_err
    return 0.0 if mean == target else None


def simulation_to_dict(result: SimulationResult, optimal: float) -> dict[str, Any]:
    z = z_score(result.cost_mean, result.cost_std_err, optimal)
    return {
        "n_paths": result.n_paths,
        "seed": result.seed,
        "population_coupling": result.population_coupling,
        "cost_mean": result.cost_mean,
        "cost_std_err": result.cost_std_err,
        "optimal_cost": optimal,
        "z_score": z,
        "mean_x": result.mean_x,
        "expected_x": result.expected.Ex,
        "mean_y": result.mean_y,
        "expected_y": result.expected.Ey,
    }


def validation_to_dict(report: ValidationReport) -> dict[str, Any]:
    return {
        "ok": report.ok,
        "violations": [{"condition": v.condition, "k": v.k, "lambda_min": v.lambda_min} for v in report.violations],
    }


def fmt(value: float) -> str:
    return f"{value:.6g}"


def format_table(header: Iterable[str], rows: Iterable[Iterable[Any]]) -> str:
    """Plain fixed-width table; floats at 6 significant digits."""
    header = list(header)
    body = [[fmt(c) if isinstance(c, (float, np.floating)) else str(c) for c in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in body]
    return "\n".join(lines)


def sequence_table(sequences: dict[str, np.ndarray]) -> str:
    """One row per step with the scalar value (n = 1) or the trace of each sequence."""
    names = list(sequences)
    length = max(len(sequences[name]) for name in names)
    rows = []
    for k in range(length):
        row: list[Any] = [k]
        for name in names:
            seq = sequences[name]
            if k >= len(seq):
                row.append("")
                continue
            val = np.asarray(seq[k])
            row.append(float(val.reshape(-1)[0]) if val.size == 1 else float(np.trace(val)))
        rows.append(row)
    return format_table(["k", *names], rows)
