"""
Backward Riccati sweeps for mean-field LQ problems.

The value function is split into a centered part acting on x - Ex, y - Ey
(the S sequences) and a mean part acting on Ex, Ey (the T sequences). The
same backward step serves scalar-noise and multinoise problems; only the way
the noise second moments enter differs, which is isolated in the two
moment kernels below.

The P-form sweep parameterizes the same value function by multipliers
P, P-bar with P = S and P + P-bar = T, and carries the uncentered gains
u = Lx x + Lx_bar Ex + Ly y + Ly_bar Ey.
"""
import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from mflq.core.errors import InvalidMoment
from mflq.core.models import (
    DEFAULT_CONFIG,
    AnyProblem,
    Matrix,
    MultiNoiseProblemSpec,
    PFormSolution,
    ProblemSpec,
    RiccatiSolution,
    SolverConfig,
)
from mflq.core.validation import moment_violations
from mflq.utils.linalg import spd_factor, spd_solve, symmetrize

logger = logging.getLogger(__name__)

Sextet = tuple[Matrix, Matrix, Matrix, Matrix, Matrix, Matrix]


class _ScalarMoments:
    """E[w^2] = E[v^2] = 1, E[wv] = rho."""

    def __init__(self, rho: float) -> None:
        self.rho = rho

    def xx(self, k: int, S: Matrix, L: Matrix, R: Matrix) -> Matrix:
        return L.T @ S @ R

    def yx(self, k: int, S: Matrix, L: Matrix, R: Matrix) -> Matrix:
        return self.rho * (L.T @ S @ R)

    def yy(self, k: int, S: Matrix, L: Matrix, R: Matrix) -> Matrix:
        return L.T @ S @ R


class _ChannelMoments:
    """Channel sums weighted by alpha_k = E[w w^T], beta_k = E[v v^T], gamma_k = E[w v^T].

    L and R carry the channel on axis 0. In the y-x kernel the left channel
    belongs to v and the right one to w, so the weight is E[v^i w^j] = gamma_k[j, i].
    """

    def __init__(self, spec: MultiNoiseProblemSpec) -> None:
        self.alpha = spec.alpha
        self.beta = spec.beta
        self.gamma = spec.gamma

    def xx(self, k: int, S: Matrix, L: Matrix, R: Matrix) -> Matrix:
        return np.einsum("ij,ika,kl,jlb->ab", self.alpha[k], L, S, R)

    def yx(self, k: int, S: Matrix, L: Matrix, R: Matrix) -> Matrix:
        return np.einsum("ji,ika,kl,jlb->ab", self.gamma[k], L, S, R)

    def yy(self, k: int, S: Matrix, L: Matrix, R: Matrix) -> Matrix:
        return np.einsum("ij,ika,kl,jlb->ab", self.beta[k], L, S, R)


def _kernel(spec: AnyProblem) -> _ScalarMoments | _ChannelMoments:
    if isinstance(spec, MultiNoiseProblemSpec):
        return _ChannelMoments(spec)
    return _ScalarMoments(spec.rho)


@dataclass(slots=True)
class _StepFactors:
    W1: Matrix
    W2: Matrix
    H1: Matrix
    H2: Matrix
    H3: Matrix
    H4: Matrix
    K1: Matrix  # W1^{-1} [H1^T | H3^T], shape (m, 2n)
    K2: Matrix  # W2^{-1} [H2^T | H4^T]


def _step_factors(spec: AnyProblem, kern, k: int, Sx: Matrix, Tx: Matrix, Sxy: Matrix, Txy: Matrix,
                  pd_rel_tol: float) -> _StepFactors:
    """W and H built from the step-(k+1) centered (S) and mean (T) values."""
    A, B = spec.A[k], spec.B[k]
    AA, BB = A + spec.A_bar[k], B + spec.B_bar[k]
    C, D, G = spec.C[k], spec.D[k], spec.G[k]
    CC, DD, GG = C + spec.C_bar[k], D + spec.D_bar[k], G + spec.G_bar[k]
    F, FF = spec.F[k], spec.F[k] + spec.F_bar[k]
    R, RR = spec.R[k], spec.R[k] + spec.R_bar[k]

    W1 = symmetrize(R + B.T @ Sx @ B + kern.xx(k, Sx, D, D))
    W2 = symmetrize(RR + BB.T @ Tx @ BB + kern.xx(k, Sx, DD, DD))
    H1 = A.T @ Sx @ B + kern.xx(k, Sx, C, D)
    H2 = AA.T @ Tx @ BB + kern.xx(k, Sx, CC, DD)
    H3 = F.T @ Sxy @ B + kern.yx(k, Sxy, G, D)
    H4 = FF.T @ Txy @ BB + kern.yx(k, Sxy, GG, DD)

    f1 = spd_factor(W1, "W1", k, pd_rel_tol)
    f2 = spd_factor(W2, "W2", k, pd_rel_tol)
    K1 = spd_solve(f1, np.hstack([H1.T, H3.T]))
    K2 = spd_solve(f2, np.hstack([H2.T, H4.T]))
    return _StepFactors(W1, W2, H1, H2, H3, H4, K1, K2)


def _check_moments(spec: AnyProblem, config: SolverConfig) -> None:
    if isinstance(spec, MultiNoiseProblemSpec):
        bad = moment_violations(spec, config)
        if bad:
            raise InvalidMoment(bad[0].k, bad[0].lambda_min)


def _sweep(spec: AnyProblem, config: SolverConfig) -> RiccatiSolution:
    N, n, m = spec.horizon, spec.state_dim, spec.control_dim
    kern = _kernel(spec)
    seqs = {name: np.zeros((N + 1, n, n)) for name in ("Sx", "Tx", "Sxy", "Txy", "Sy", "Ty")}
    W1 = np.zeros((N, m, m))
    W2 = np.zeros((N, m, m))
    H = {name: np.zeros((N, n, m)) for name in ("H1", "H2", "H3", "H4")}

    QN, QQN = spec.Q[N], spec.Q[N] + spec.Q_bar[N]
    seqs["Sx"][N], seqs["Tx"][N] = QN, QQN
    seqs["Sxy"][N], seqs["Txy"][N] = -QN, -QQN
    seqs["Sy"][N], seqs["Ty"][N] = QN, QQN

    for k in range(N - 1, -1, -1):
        Sx, Tx = seqs["Sx"][k + 1], seqs["Tx"][k + 1]
        Sxy, Txy = seqs["Sxy"][k + 1], seqs["Txy"][k + 1]
        Sy, Ty = seqs["Sy"][k + 1], seqs["Ty"][k + 1]
        fac = _step_factors(spec, kern, k, Sx, Tx, Sxy, Txy, config.pd_rel_tol)
        Kx1, Ky1 = fac.K1[:, :n], fac.K1[:, n:]
        Kx2, Ky2 = fac.K2[:, :n], fac.K2[:, n:]

        A, AA = spec.A[k], spec.A[k] + spec.A_bar[k]
        C, CC = spec.C[k], spec.C[k] + spec.C_bar[k]
        F, FF = spec.F[k], spec.F[k] + spec.F_bar[k]
        G, GG = spec.G[k], spec.G[k] + spec.G_bar[k]
        Q, QQ = spec.Q[k], spec.Q[k] + spec.Q_bar[k]

        seqs["Sx"][k] = symmetrize(Q + A.T @ Sx @ A + kern.xx(k, Sx, C, C) - fac.H1 @ Kx1)
        seqs["Tx"][k] = symmetrize(QQ + AA.T @ Tx @ AA + kern.xx(k, Sx, CC, CC) - fac.H2 @ Kx2)
        seqs["Sxy"][k] = -Q + F.T @ Sxy @ A + kern.yx(k, Sxy, G, C) - fac.H3 @ Kx1
        seqs["Txy"][k] = -QQ + FF.T @ Txy @ AA + kern.yx(k, Sxy, GG, CC) - fac.H4 @ Kx2
        seqs["Sy"][k] = symmetrize(Q + F.T @ Sy @ F + kern.yy(k, Sy, G, G) - fac.H3 @ Ky1)
        seqs["Ty"][k] = symmetrize(QQ + FF.T @ Ty @ FF + kern.yy(k, Sy, GG, GG) - fac.H4 @ Ky2)

        W1[k], W2[k] = fac.W1, fac.W2
        H["H1"][k], H["H2"][k], H["H3"][k], H["H4"][k] = fac.H1, fac.H2, fac.H3, fac.H4
        logger.debug("k=%d: tr Sx=%.6g tr Tx=%.6g", k, np.trace(seqs["Sx"][k]), np.trace(seqs["Tx"][k]))

    return RiccatiSolution(W1=W1, W2=W2, **seqs, **H)


def solve_riccati(spec: ProblemSpec, config: SolverConfig | None = None) -> RiccatiSolution:
    """Centered/mean Riccati sequences for a scalar-noise problem."""
    cfg = config or DEFAULT_CONFIG
    logger.info("solving S/T Riccati equations (N=%d, n=%d, m=%d)", spec.horizon, spec.state_dim, spec.control_dim)
    return _sweep(spec, cfg)


def solve_riccati_multinoise(spec: MultiNoiseProblemSpec, config: SolverConfig | None = None) -> RiccatiSolution:
    """Same sweep with channel sums over the p noise pairs.

    The moments alpha_k, beta_k, gamma_k enter the step-k update; they are
    the moments of the noise driving the transition k -> k+1.
    """
    cfg = config or DEFAULT_CONFIG
    _check_moments(spec, cfg)
    logger.info("solving multinoise Riccati equations (N=%d, n=%d, m=%d, p=%d)",
                spec.horizon, spec.state_dim, spec.control_dim, spec.noise_dim)
    return _sweep(spec, cfg)


def solve(spec: AnyProblem, config: SolverConfig | None = None) -> RiccatiSolution:
    """Dispatch on the problem kind."""
    if isinstance(spec, MultiNoiseProblemSpec):
        return solve_riccati_multinoise(spec, config)
    return solve_riccati(spec, config)


def solve_p_form(spec: AnyProblem, config: SolverConfig | None = None, *,
                 printed_boundary: bool = False) -> PFormSolution:
    """Multiplier sequences and uncentered gains.

    With printed_boundary=True the terminal Pxy_bar is set to -Q_N instead
    of -Q_bar_N; the resulting sequences no longer agree with the S/T sweep
    unless Q_bar_N = Q_N.
    """
    cfg = config or DEFAULT_CONFIG
    _check_moments(spec, cfg)
    N, n, m = spec.horizon, spec.state_dim, spec.control_dim
    kern = _kernel(spec)
    P = {name: np.zeros((N + 1, n, n)) for name in ("Px", "Px_bar", "Pxy", "Pxy_bar", "Py", "Py_bar")}
    L = {name: np.zeros((N, m, n)) for name in ("Lx", "Lx_bar", "Ly", "Ly_bar")}
    W1 = np.zeros((N, m, m))
    W2 = np.zeros((N, m, m))

    QN, QbN = spec.Q[N], spec.Q_bar[N]
    P["Px"][N], P["Px_bar"][N] = QN, QbN
    P["Pxy"][N], P["Pxy_bar"][N] = -QN, (-QN if printed_boundary else -QbN)
    P["Py"][N], P["Py_bar"][N] = QN, QbN

    for k in range(N - 1, -1, -1):
        Px, Pxy, Py = P["Px"][k + 1], P["Pxy"][k + 1], P["Py"][k + 1]
        Px_sum = Px + P["Px_bar"][k + 1]
        Pxy_sum = Pxy + P["Pxy_bar"][k + 1]
        Py_sum = Py + P["Py_bar"][k + 1]
        fac = _step_factors(spec, kern, k, Px, Px_sum, Pxy, Pxy_sum, cfg.pd_rel_tol)
        Lx, Ly = -fac.K1[:, :n], -fac.K1[:, n:]
        Mx, My = -fac.K2[:, :n], -fac.K2[:, n:]  # Lx + Lx_bar, Ly + Ly_bar

        A, AA = spec.A[k], spec.A[k] + spec.A_bar[k]
        C, CC = spec.C[k], spec.C[k] + spec.C_bar[k]
        F, FF = spec.F[k], spec.F[k] + spec.F_bar[k]
        G, GG = spec.G[k], spec.G[k] + spec.G_bar[k]
        Q, QQ = spec.Q[k], spec.Q[k] + spec.Q_bar[k]

        px = symmetrize(Q + A.T @ Px @ A + kern.xx(k, Px, C, C) + fac.H1 @ Lx)
        px_sum = symmetrize(QQ + AA.T @ Px_sum @ AA + kern.xx(k, Px, CC, CC) + fac.H2 @ Mx)
        pxy = -Q + F.T @ Pxy @ A + kern.yx(k, Pxy, G, C) + fac.H3 @ Lx
        pxy_sum = -QQ + FF.T @ Pxy_sum @ AA + kern.yx(k, Pxy, GG, CC) + fac.H4 @ Mx
        py = symmetrize(Q + F.T @ Py @ F + kern.yy(k, Py, G, G) + fac.H3 @ Ly)
        py_sum = symmetrize(QQ + FF.T @ Py_sum @ FF + kern.yy(k, Py, GG, GG) + fac.H4 @ My)

        P["Px"][k], P["Px_bar"][k] = px, px_sum - px
        P["Pxy"][k], P["Pxy_bar"][k] = pxy, pxy_sum - pxy
        P["Py"][k], P["Py_bar"][k] = py, py_sum - py
        L["Lx"][k], L["Lx_bar"][k] = Lx, Mx - Lx
        L["Ly"][k], L["Ly_bar"][k] = Ly, My - Ly
        W1[k], W2[k] = fac.W1, fac.W2

    return PFormSolution(W1=W1, W2=W2, **P, **L)


def expanded_p_step(spec: ProblemSpec, k: int, nxt: Sextet,
                    config: SolverConfig | None = None) -> Sextet:
    """One backward P-form step through the gain-explicit quadratic forms.

    `nxt` holds (Px, Px_bar, Pxy, Pxy_bar, Py, Py_bar) at step k+1. Every
    term is written as the closed-loop quadratic it comes from, with no
    completed square, so it serves as an independent evaluation of the
    compact update in solve_p_form.
    """
    cfg = config or DEFAULT_CONFIG
    Px, Px_bar, Pxy, Pxy_bar, Py, Py_bar = nxt
    Tx, Txy, Ty = Px + Px_bar, Pxy + Pxy_bar, Py + Py_bar
    kern = _ScalarMoments(spec.rho)
    fac = _step_factors(spec, kern, k, Px, Tx, Pxy, Txy, cfg.pd_rel_tol)
    n = spec.state_dim
    Lx, Ly = -fac.K1[:, :n], -fac.K1[:, n:]
    Mx, My = -fac.K2[:, :n], -fac.K2[:, n:]
    rho = spec.rho

    A, B, C, D, F, G = spec.A[k], spec.B[k], spec.C[k], spec.D[k], spec.F[k], spec.G[k]
    AA, BB = A + spec.A_bar[k], B + spec.B_bar[k]
    CC, DD = C + spec.C_bar[k], D + spec.D_bar[k]
    FF, GG = F + spec.F_bar[k], G + spec.G_bar[k]
    Q, QQ = spec.Q[k], spec.Q[k] + spec.Q_bar[k]
    R, RR = spec.R[k], spec.R[k] + spec.R_bar[k]

    # centered closed loop: x' = (A + B Lx) x + B Ly y, noise (C + D Lx) x + D Ly y
    ax, cx = A + B @ Lx, C + D @ Lx
    px = Q + ax.T @ Px @ ax + cx.T @ Px @ cx + Lx.T @ R @ Lx
    pxy = (-Q + F.T @ Pxy @ ax + rho * G.T @ Pxy @ cx
           + Ly.T @ B.T @ Px @ ax + Ly.T @ D.T @ Px @ cx + Ly.T @ R @ Lx)
    cross_y = F.T @ Pxy @ B @ Ly + rho * G.T @ Pxy @ D @ Ly
    py = (Q + F.T @ Py @ F + G.T @ Py @ G + cross_y + cross_y.T
          + Ly.T @ (R + B.T @ Px @ B + D.T @ Px @ D) @ Ly)

    # mean closed loop with Mx = Lx + Lx_bar, My = Ly + Ly_bar
    ax_m, cx_m = AA + BB @ Mx, CC + DD @ Mx
    tx = QQ + ax_m.T @ Tx @ ax_m + cx_m.T @ Px @ cx_m + Mx.T @ RR @ Mx
    txy = (-QQ + FF.T @ Txy @ ax_m + rho * GG.T @ Pxy @ cx_m
           + My.T @ BB.T @ Tx @ ax_m + My.T @ DD.T @ Px @ cx_m + My.T @ RR @ Mx)
    cross_ym = FF.T @ Txy @ BB @ My + rho * GG.T @ Pxy @ DD @ My
    ty = (QQ + FF.T @ Ty @ FF + GG.T @ Py @ GG + cross_ym + cross_ym.T
          + My.T @ (RR + BB.T @ Tx @ BB + DD.T @ Px @ DD) @ My)

    px, tx, py, ty = symmetrize(px), symmetrize(tx), symmetrize(py), symmetrize(ty)
    return px, tx - px, pxy, txy - pxy, py, ty - py


def p_form_deviation(riccati: RiccatiSolution, pform: PFormSolution) -> float:
    """Largest relative element-wise gap between the P-form and S/T sequences."""
    pairs = (
        (pform.Px, riccati.Sx), (pform.Px + pform.Px_bar, riccati.Tx),
        (pform.Pxy, riccati.Sxy), (pform.Pxy + pform.Pxy_bar, riccati.Txy),
        (pform.Py, riccati.Sy), (pform.Py + pform.Py_bar, riccati.Ty),
    )
    worst = 0.0
    for p_seq, s_seq in pairs:
        scale = 1.0 + float(np.max(np.abs(s_seq)))
        worst = max(worst, float(np.max(np.abs(p_seq - s_seq))) / scale)
    return worst


def sequences(riccati: RiccatiSolution) -> dict[str, npt.NDArray[np.float64]]:
    return {
        "Sx": riccati.Sx, "Tx": riccati.Tx, "Sxy": riccati.Sxy,
        "Txy": riccati.Txy, "Sy": riccati.Sy, "Ty": riccati.Ty,
    }
