"""Small hand-checkable problems shared by the test modules."""
from dataclasses import replace

import numpy as np

from mflq.core.models import ProblemSpec


def scalar_problem(N=1, q=1.0, r=1.0, **overrides) -> ProblemSpec:
    """One-dimensional problem with A = B = 1 and everything else zero."""
    zeros = np.zeros((N, 1, 1))
    fields = dict(
        horizon=N, state_dim=1, control_dim=1,
        A=np.ones((N, 1, 1)), A_bar=zeros, B=np.ones((N, 1, 1)), B_bar=zeros,
        C=zeros, C_bar=zeros, D=zeros, D_bar=zeros, F=zeros, F_bar=zeros, G=zeros, G_bar=zeros,
        Q=q * np.ones((N + 1, 1, 1)), Q_bar=np.zeros((N + 1, 1, 1)),
        R=r * np.ones((N, 1, 1)), R_bar=zeros, rho=0.0,
    )
    fields.update(overrides)
    return ProblemSpec(**fields)


def zero_dynamics(spec):
    zeros = {name: np.zeros_like(getattr(spec, name)) for name in spec.STATE_MATRICES + spec.CONTROL_MATRICES}
    return replace(spec, **zeros)


def rel_gap(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b))) / (1.0 + float(np.max(np.abs(b))))
