"""
Mean-field asset-liability management.

Wealth x and liability y evolve as

    x_{k+1} = a_k x_k + B_k u_k,    y_{k+1} = f_k y_k,

where u_k is the vector of amounts held in the m risky assets, B_k their
random excess returns (row vector with mean E B_k and covariance Cov B_k),
a_k the risk-free return and f_k the liability growth. The objective
penalizes the variance and the mean of the terminal surplus x_N - y_N
(weights q_N, q_bar_N) and the positions through R_k.

Only the first two moments of B_k enter; E(B_k^T B_k) is always formed as
Cov B_k + E B_k^T E B_k.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np
import numpy.typing as npt
from scipy.linalg import pinvh

from mflq.core.errors import DimensionMismatch, InvalidRequest, RangeViolation
from mflq.core.models import (
    DEFAULT_CONFIG,
    FeedbackPolicy,
    InitialMoments,
    MultiNoiseProblemSpec,
    SolverConfig,
    ValidationReport,
    ValidationViolation,
)
from mflq.utils.linalg import is_pd, is_psd, spd_factor, spd_solve, symmetrize

logger = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]


@dataclass(frozen=True, slots=True)
class AlmProblem:
    """Scalar-wealth ALM problem with m risky assets over N periods."""
    horizon: int
    asset_count: int
    a: Array  # (N,)
    f: Array  # (N,)
    mean_excess: Array  # (N, m)
    cov_excess: Array  # (N, m, m)
    R: Array  # (N, m, m)
    q_N: float
    q_bar_N: float

    def __post_init__(self) -> None:
        N, m = self.horizon, self.asset_count
        if N < 1 or m < 1:
            raise DimensionMismatch(f"dimensions must be positive, got N={N}, m={m}")
        shapes = {"a": (N,), "f": (N,), "mean_excess": (N, m), "cov_excess": (N, m, m), "R": (N, m, m)}
        for name, shape in shapes.items():
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {shape}")
            if arr.ndim == 3:
                arr = 0.5 * (arr + np.swapaxes(arr, 1, 2))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "q_N", float(self.q_N))
        object.__setattr__(self, "q_bar_N", float(self.q_bar_N))

    def second_moment(self, k: int) -> Array:
        """E(B_k^T B_k) = Cov B_k + E B_k^T E B_k."""
        eb = self.mean_excess[k]
        return self.cov_excess[k] + np.outer(eb, eb)


@dataclass(frozen=True, slots=True)
class AlmRiccati:
    """Scalar Riccati sequences (length N + 1) and the W (m, m) / H (m,) factors per step."""
    Sx: Array
    Tx: Array
    Sxy: Array
    Txy: Array
    Sy: Array
    Ty: Array
    W1: Array
    W2: Array
    H1: Array
    H2: Array
    H3: Array
    H4: Array

    def __post_init__(self) -> None:
        for f in fields(self):
            getattr(self, f.name).setflags(write=False)

    @property
    def horizon(self) -> int:
        return int(self.W1.shape[0])


def validate_alm(alm: AlmProblem, config: SolverConfig | None = None) -> ValidationReport:
    cfg = config or DEFAULT_CONFIG
    found: list[ValidationViolation] = []
    for k in range(alm.horizon):
        ok, lam = is_psd(alm.cov_excess[k], cfg.psd_tol)
        if not ok:
            found.append(ValidationViolation("cov_excess_psd", k, lam))
        ok, lam = is_pd(alm.R[k], cfg.pd_rel_tol)
        if not ok:
            found.append(ValidationViolation("R_pd", k, lam))
    if alm.q_N < 0.0:
        found.append(ValidationViolation("Q_psd", alm.horizon, alm.q_N))
    if alm.q_N + alm.q_bar_N < 0.0:
        found.append(ValidationViolation("Q_plus_Qbar_psd", alm.horizon, alm.q_N + alm.q_bar_N))
    return ValidationReport(tuple(found))


def lift_to_multinoise(alm: AlmProblem) -> MultiNoiseProblemSpec:
    """Write the ALM problem as a one-dimensional multinoise MF-LQ problem.

    The random excess return splits as B_k = E B_k + sum_i e_i^T w^i_k with
    Cov(w_k) = Cov B_k, so each asset contributes one noise channel whose
    control loading is the i-th unit row.
    """
    N, m = alm.horizon, alm.asset_count
    zeros_nn = np.zeros((N, 1, 1))
    D = np.zeros((N, m, 1, m))
    D[:, np.arange(m), 0, np.arange(m)] = 1.0
    Q = np.zeros((N + 1, 1, 1))
    Q_bar = np.zeros((N + 1, 1, 1))
    Q[N, 0, 0] = alm.q_N
    Q_bar[N, 0, 0] = alm.q_bar_N
    return MultiNoiseProblemSpec(
        horizon=N, state_dim=1, control_dim=m, noise_dim=m,
        A=alm.a.reshape(N, 1, 1), A_bar=zeros_nn,
        B=alm.mean_excess.reshape(N, 1, m), B_bar=np.zeros((N, 1, m)),
        C=np.zeros((N, m, 1, 1)), C_bar=np.zeros((N, m, 1, 1)),
        D=D, D_bar=np.zeros((N, m, 1, m)),
        F=alm.f.reshape(N, 1, 1), F_bar=zeros_nn,
        G=np.zeros((N, m, 1, 1)), G_bar=np.zeros((N, m, 1, 1)),
        Q=Q, Q_bar=Q_bar, R=alm.R, R_bar=np.zeros((N, m, m)),
        alpha=alm.cov_excess, beta=np.zeros((N, m, m)), gamma=np.zeros((N, m, m)),
    )


def solve_alm_riccati(alm: AlmProblem, config: SolverConfig | None = None) -> AlmRiccati:
    """Scalar backward recursion specialised to the ALM structure.

    Parameters
    ----------
    alm : AlmProblem
        Problem data; only the first two moments of the excess returns are used.
    config : SolverConfig, optional
        Positive-definiteness threshold for the W factors.

    Returns
    -------
    AlmRiccati
        Sequences with terminal values S^x_N = S^y_N = q_N, S^xy_N = -q_N and
        T = q_N + q_bar_N (negated for T^xy).

    Raises
    ------
    NotPositiveDefinite
        If a W factor is numerically singular.
    """
    cfg = config or DEFAULT_CONFIG
    N, m = alm.horizon, alm.asset_count
    S = {name: np.zeros(N + 1) for name in ("Sx", "Tx", "Sxy", "Txy", "Sy", "Ty")}
    W1 = np.zeros((N, m, m))
    W2 = np.zeros((N, m, m))
    H = {name: np.zeros((N, m)) for name in ("H1", "H2", "H3", "H4")}
    q, qq = alm.q_N, alm.q_N + alm.q_bar_N
    S["Sx"][N], S["Tx"][N], S["Sxy"][N], S["Txy"][N], S["Sy"][N], S["Ty"][N] = q, qq, -q, -qq, q, qq

    for k in range(N - 1, -1, -1):
        s, t = S["Sx"][k + 1], S["Tx"][k + 1]
        sxy, txy = S["Sxy"][k + 1], S["Txy"][k + 1]
        sy, ty = S["Sy"][k + 1], S["Ty"][k + 1]
        a, f, eb = alm.a[k], alm.f[k], alm.mean_excess[k]
        W1[k] = symmetrize(alm.R[k] + s * alm.second_moment(k))
        W2[k] = symmetrize(alm.R[k] + t * np.outer(eb, eb) + s * alm.cov_excess[k])
        H["H1"][k], H["H2"][k] = a * s * eb, a * t * eb
        H["H3"][k], H["H4"][k] = f * sxy * eb, f * txy * eb

        g1 = float(eb @ spd_solve(spd_factor(W1[k], "W1", k, cfg.pd_rel_tol), eb))
        g2 = float(eb @ spd_solve(spd_factor(W2[k], "W2", k, cfg.pd_rel_tol), eb))
        S["Sx"][k] = a * a * s * (1.0 - s * g1)
        S["Tx"][k] = a * a * t * (1.0 - t * g2)
        S["Sxy"][k] = a * f * sxy * (1.0 - s * g1)
        S["Txy"][k] = a * f * txy * (1.0 - t * g2)
        S["Sy"][k] = f * f * (sy - sxy * sxy * g1)
        S["Ty"][k] = f * f * (ty - txy * txy * g2)
    logger.info("ALM Riccati solved: Sx_0=%.6g Sy_0=%.6g", S["Sx"][0], S["Sy"][0])
    return AlmRiccati(W1=W1, W2=W2, **S, **H)


def centered_gains(riccati: AlmRiccati, config: SolverConfig | None = None) -> tuple[Array, Array, Array, Array]:
    """Per-step gain rows (Ox, Ox_bar, Oy, Oy_bar), each (N, m).

    Ox_k = -W1^{-1} H1^T acts on x - Ex, Ox_bar_k = -W2^{-1} H2^T on Ex,
    and Oy, Oy_bar likewise on y - Ey and Ey.
    """
    cfg = config or DEFAULT_CONFIG
    N, m = riccati.H1.shape
    out = [np.zeros((N, m)) for _ in range(4)]
    for k in range(N):
        f1 = spd_factor(riccati.W1[k], "W1", k, cfg.pd_rel_tol)
        f2 = spd_factor(riccati.W2[k], "W2", k, cfg.pd_rel_tol)
        out[0][k] = -spd_solve(f1, riccati.H1[k])
        out[1][k] = -spd_solve(f2, riccati.H2[k])
        out[2][k] = -spd_solve(f1, riccati.H3[k])
        out[3][k] = -spd_solve(f2, riccati.H4[k])
    return out[0], out[1], out[2], out[3]


def alm_policy(riccati: AlmRiccati, config: SolverConfig | None = None) -> FeedbackPolicy:
    """The ALM strategy as a one-dimensional feedback policy."""
    ox, ox_bar, oy, oy_bar = centered_gains(riccati, config)
    return FeedbackPolicy(ox[:, :, None], ox_bar[:, :, None], oy[:, :, None], oy_bar[:, :, None])


def alm_strategy(alm: AlmProblem, riccati: AlmRiccati, k: int, x: float, Ex: float, y: float, Ey: float,
                 config: SolverConfig | None = None) -> Array:
    """Optimal holdings in the m risky assets at step k."""
    if not 0 <= k < alm.horizon:
        raise InvalidRequest(f"step {k} outside 0..{alm.horizon - 1}")
    if riccati.horizon != alm.horizon or riccati.H1.shape[1] != alm.asset_count:
        raise DimensionMismatch("Riccati solution does not match the ALM problem")
    tol = (config or DEFAULT_CONFIG).pd_rel_tol
    f1 = spd_factor(riccati.W1[k], "W1", k, tol)
    f2 = spd_factor(riccati.W2[k], "W2", k, tol)
    return -(spd_solve(f1, riccati.H1[k]) * (x - Ex) + spd_solve(f2, riccati.H2[k]) * Ex
             + spd_solve(f1, riccati.H3[k]) * (y - Ey) + spd_solve(f2, riccati.H4[k]) * Ey)


def alm_optimal_value(riccati: AlmRiccati, init: InitialMoments) -> float:
    """Minimal objective in terms of the initial wealth/liability moments.

    The cross terms carry a factor two, as in the general MF-LQ value.
    """
    if init.dim != 1:
        raise DimensionMismatch(f"ALM initial moments must be scalar, got dimension {init.dim}")
    mx, my = float(init.mean_x[0]), float(init.mean_y[0])
    var_x, var_y, cov = float(init.cov_x[0, 0]), float(init.cov_y[0, 0]), float(init.cov_xy[0, 0])
    return (riccati.Sx[0] * var_x + riccati.Tx[0] * mx * mx
            + 2.0 * riccati.Sxy[0] * cov + 2.0 * riccati.Txy[0] * mx * my
            + riccati.Sy[0] * var_y + riccati.Ty[0] * my * my)


def expected_terminal_equity(alm: AlmProblem, riccati: AlmRiccati, mean_x: float, mean_y: float,
                             config: SolverConfig | None = None) -> float:
    """E(x_N - y_N) under the optimal strategy."""
    tol = (config or DEFAULT_CONFIG).pd_rel_tol
    ex, ey = float(mean_x), float(mean_y)
    for k in range(alm.horizon):
        eb = alm.mean_excess[k]
        g2 = float(eb @ spd_solve(spd_factor(riccati.W2[k], "W2", k, tol), eb))
        n_k = alm.a[k] * (1.0 - riccati.Tx[k + 1] * g2)
        m_k = -alm.f[k] * riccati.Txy[k + 1] * g2
        ex, ey = n_k * ex + m_k * ey, alm.f[k] * ey
    return ex - ey


def pinv_rank_one(M: npt.ArrayLike, c: npt.ArrayLike, config: SolverConfig | None = None) -> Array:
    """Pseudo-inverse of M + c c^T from the pseudo-inverse of M.

    Parameters
    ----------
    M : array_like, shape (n, n)
        Symmetric positive semi-definite matrix.
    c : array_like, shape (n,)
        Update vector; must lie in the range of M.

    Returns
    -------
    ndarray, shape (n, n)
        M^+ - M^+ c c^T M^+ / (1 + c^T M^+ c).

    Raises
    ------
    RangeViolation
        If the least-squares residual |M M^+ c - c| exceeds config.range_tol |c|.
    """
    M = symmetrize(np.asarray(M, dtype=np.float64))
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    if M.shape != (c.size, c.size):
        raise DimensionMismatch(f"M has shape {M.shape} but c has length {c.size}")
    M_pinv = pinvh(M)
    norm_c = float(np.linalg.norm(c))
    if norm_c == 0.0:
        return M_pinv
    residual = float(np.linalg.norm(M @ (M_pinv @ c) - c))
    if residual > (config or DEFAULT_CONFIG).range_tol * norm_c:
        raise RangeViolation(residual / norm_c)
    z = M_pinv @ c
    return M_pinv - np.outer(z, z) / (1.0 + c @ z)


def rational_sx_sequence(alm: AlmProblem, config: SolverConfig | None = None) -> tuple[Array, Array]:
    """S^x and T^x through the rank-one route.

    W1 = (R + s Cov B) + s E B^T E B and W2 = (R + s Cov B) + t E B^T E B
    are rank-one updates of the same matrix, so their inverses follow from
    pinv_rank_one. The result reduces to S^x_k = a^2 s / (1 + s g) with
    g = E B (R + s Cov B)^{-1} E B^T.
    """
    N = alm.horizon
    Sx = np.zeros(N + 1)
    Tx = np.zeros(N + 1)
    Sx[N], Tx[N] = alm.q_N, alm.q_N + alm.q_bar_N
    for k in range(N - 1, -1, -1):
        s, t = Sx[k + 1], Tx[k + 1]
        a, eb = alm.a[k], alm.mean_excess[k]
        base = alm.R[k] + s * alm.cov_excess[k]
        w1_pinv = pinv_rank_one(base, np.sqrt(max(s, 0.0)) * eb, config)
        w2_pinv = pinv_rank_one(base, np.sqrt(max(t, 0.0)) * eb, config)
        Sx[k] = a * a * s * (1.0 - s * (eb @ w1_pinv @ eb))
        Tx[k] = a * a * t * (1.0 - t * (eb @ w2_pinv @ eb))
    return Sx, Tx


def moments_from_returns(returns: npt.ArrayLike, horizon: int, pooled: bool = False) -> tuple[Array, Array]:
    """Per-step (E B_k, Cov B_k) from a (T, m) matrix of historical excess returns.

    With pooled=True every step gets the moments of the full sample. Otherwise
    the rows are split into `horizon` contiguous windows, one per step, each
    needing at least two rows. Covariances use ddof=1.
    """
    data = np.asarray(returns, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    if data.ndim != 2:
        raise DimensionMismatch(f"returns must be a (periods, assets) matrix, got shape {data.shape}")
    m = data.shape[1]

    def _moments(rows: Array) -> tuple[Array, Array]:
        if rows.shape[0] < 2:
            raise InvalidRequest("each estimation window needs at least two return rows")
        return rows.mean(axis=0), np.atleast_2d(np.cov(rows, rowvar=False, ddof=1)).reshape(m, m)

    if pooled:
        mean, cov = _moments(data)
        return np.tile(mean, (horizon, 1)), np.tile(cov, (horizon, 1, 1))
    windows = np.array_split(data, horizon)
    pairs = [_moments(rows) for rows in windows]
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def alm_from_returns(returns: npt.ArrayLike, horizon: int, *, risk_free: float, liability_growth: float,
                     risk_aversion: float = 1.0, q_N: float = 1.0, q_bar_N: float = 0.0,
                     pooled: bool = False) -> AlmProblem:
    """Build an ALM problem with constant a, f and R = risk_aversion * I from return history."""
    mean, cov = moments_from_returns(returns, horizon, pooled)
    m = mean.shape[1]
    logger.info("estimated %s moments for %d assets over %d steps", "pooled" if pooled else "per-step", m, horizon)
    return AlmProblem(
        horizon=horizon, asset_count=m,
        a=np.full(horizon, risk_free), f=np.full(horizon, liability_growth),
        mean_excess=mean, cov_excess=cov, R=np.tile(risk_aversion * np.eye(m), (horizon, 1, 1)),
        q_N=q_N, q_bar_N=q_bar_N,
    )
