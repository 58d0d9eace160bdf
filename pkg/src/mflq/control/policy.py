"""Feedback policies, closed-loop expected trajectories and the optimal cost."""
import logging

import numpy as np
import numpy.typing as npt

from mflq.core.errors import DimensionMismatch, InvalidRequest
from mflq.core.models import (
    AnyProblem,
    ExpectedTrajectory,
    FeedbackPolicy,
    InitialMoments,
    RiccatiSolution,
)
from mflq.utils.linalg import spd_factor, spd_solve

logger = logging.getLogger(__name__)


def build_policy(riccati: RiccatiSolution, pd_rel_tol: float = 1e-12) -> FeedbackPolicy:
    """Centered-form gains Kx = -W1^{-1} H1^T, Kx_bar = -W2^{-1} H2^T, and likewise for y with H3, H4."""
    N, n, m = riccati.horizon, riccati.H1.shape[1], riccati.H1.shape[2]
    gains = {name: np.zeros((N, m, n)) for name in ("Kx", "Kx_bar", "Ky", "Ky_bar")}
    for k in range(N):
        f1 = spd_factor(riccati.W1[k], "W1", k, pd_rel_tol)
        f2 = spd_factor(riccati.W2[k], "W2", k, pd_rel_tol)
        gains["Kx"][k] = -spd_solve(f1, riccati.H1[k].T)
        gains["Ky"][k] = -spd_solve(f1, riccati.H3[k].T)
        gains["Kx_bar"][k] = -spd_solve(f2, riccati.H2[k].T)
        gains["Ky_bar"][k] = -spd_solve(f2, riccati.H4[k].T)
    return FeedbackPolicy(**gains)


def control_action(policy: FeedbackPolicy, k: int, x: npt.ArrayLike, Ex: npt.ArrayLike,
                   y: npt.ArrayLike, Ey: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """u_k for one state (n,) or a batch of states (P, n); Ex and Ey are (n,)."""
    if not 0 <= k < policy.horizon:
        raise InvalidRequest(f"step {k} outside 0..{policy.horizon - 1}")
    n = policy.Kx.shape[2]
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    Ex, Ey = np.asarray(Ex, dtype=np.float64), np.asarray(Ey, dtype=np.float64)
    if x.shape[-1] != n or y.shape != x.shape or Ex.shape != (n,) or Ey.shape != (n,):
        raise DimensionMismatch(f"expected states of width {n}, got x{x.shape}, y{y.shape}, Ex{Ex.shape}, Ey{Ey.shape}")
    mean_part = policy.Kx_bar[k] @ Ex + policy.Ky_bar[k] @ Ey
    return (x - Ex) @ policy.Kx[k].T + (y - Ey) @ policy.Ky[k].T + mean_part


def trajectory_under_policy(spec: AnyProblem, policy: FeedbackPolicy, mean_x: npt.ArrayLike,
                            mean_y: npt.ArrayLike) -> ExpectedTrajectory:
    """Forward recursion of the means under any linear feedback in centered form."""
    N, n, m = spec.horizon, spec.state_dim, spec.control_dim
    Ex = np.zeros((N + 1, n))
    Ey = np.zeros((N + 1, n))
    Eu = np.zeros((N, m))
    N_f = np.zeros((N, n, n))
    M_f = np.zeros((N, n, n))
    O_f = np.zeros((N, n, n))
    Ex[0] = np.asarray(mean_x, dtype=np.float64)
    Ey[0] = np.asarray(mean_y, dtype=np.float64)
    for k in range(N):
        BB = spec.B[k] + spec.B_bar[k]
        N_f[k] = spec.A[k] + spec.A_bar[k] + BB @ policy.Kx_bar[k]
        M_f[k] = BB @ policy.Ky_bar[k]
        O_f[k] = spec.F[k] + spec.F_bar[k]
        Eu[k] = policy.Kx_bar[k] @ Ex[k] + policy.Ky_bar[k] @ Ey[k]
        Ex[k + 1] = N_f[k] @ Ex[k] + M_f[k] @ Ey[k]
        Ey[k + 1] = O_f[k] @ Ey[k]
    return ExpectedTrajectory(Ex, Ey, Eu, N_f, M_f, O_f)


def expected_trajectory(spec: AnyProblem, riccati: RiccatiSolution, mean_x: npt.ArrayLike,
                        mean_y: npt.ArrayLike) -> ExpectedTrajectory:
    return trajectory_under_policy(spec, build_policy(riccati), mean_x, mean_y)


def expected_trajectory_product(traj: ExpectedTrajectory, mean_x: npt.ArrayLike,
                                mean_y: npt.ArrayLike) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Closed-form means from the transition factors.

    E x_k = N_{k-1}...N_0 E zeta_x + sum_{i<k} N_{k-1}...N_{i+1} M_i O_{i-1}...O_0 E zeta_y,
    E y_k = O_{k-1}...O_0 E zeta_y.
    """
    N_f, M_f, O_f = traj.N_factors, traj.M_factors, traj.O_factors
    horizon, n = N_f.shape[0], N_f.shape[1]
    mx = np.asarray(mean_x, dtype=np.float64)
    my = np.asarray(mean_y, dtype=np.float64)

    def ordered(mats, lo: int, hi: int) -> np.ndarray:
        # mats[hi-1] @ ... @ mats[lo]; identity when empty
        out = np.eye(n)
        for j in range(lo, hi):
            out = mats[j] @ out
        return out

    Ex = np.zeros((horizon + 1, n))
    Ey = np.zeros((horizon + 1, n))
    for k in range(horizon + 1):
        Ey[k] = ordered(O_f, 0, k) @ my
        acc = ordered(N_f, 0, k) @ mx
        for i in range(k):
            acc = acc + ordered(N_f, i + 1, k) @ M_f[i] @ ordered(O_f, 0, i) @ my
        Ex[k] = acc
    return Ex, Ey


def optimal_cost(riccati: RiccatiSolution, init: InitialMoments) -> float:
    """Minimal cost expressed in the first two moments of the initial pair."""
    mx, my = init.mean_x, init.mean_y
    value = (
        np.trace(riccati.Sx[0] @ init.cov_x)
        + mx @ riccati.Tx[0] @ mx
        + 2.0 * np.trace(riccati.Sxy[0] @ init.cov_xy)
        + 2.0 * my @ riccati.Txy[0] @ mx
        + np.trace(riccati.Sy[0] @ init.cov_y)
        + my @ riccati.Ty[0] @ my
    )
    return float(value)
