"""
Exact optimality check on a finite scenario tree.

With finitely supported initial data and noise, an adapted control is one
decision vector per tree node. Every state is then an affine function of
the stacked vector xi = [u; zeta_x; zeta_y] (controls of all nodes, then
the initial support values), and so is every level expectation. The cost
becomes a quadratic form xi^T M xi, which is partitioned into

    J = <Theta2 u, u> + 2 <Theta1 u, zeta_x> + 2 <Theta3 u, zeta_y>
        + <Lambda1 zeta_x, zeta_x> + 2 <Lambda2 zeta_x, zeta_y> + <Lambda3 zeta_y, zeta_y>

and minimized over u by one dense SPD solve.

Controls live on levels 0..N-1; level N carries only the terminal cost.
Level-0 nodes are the support points of the initial law.
"""
import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.linalg import eigvalsh

from mflq.control.policy import control_action
from mflq.core.errors import DimensionMismatch, SingularTheta2, TreeTooLarge
from mflq.core.interfaces import InitialLaw, NoiseLaw
from mflq.core.models import DEFAULT_CONFIG, AnyProblem, FeedbackPolicy, FiniteLaw, SolverConfig
from mflq.utils.linalg import is_pd, spd_factor, spd_solve, symmetrize

logger = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]


@dataclass(frozen=True, slots=True)
class ScenarioTree:
    horizon: int
    initial: FiniteLaw  # on (zeta_x, zeta_y)
    branches: tuple[FiniteLaw, ...]  # law of (w_k, v_k) for each transition k -> k+1
    parents: tuple[npt.NDArray[np.int64], ...]  # level k >= 1 -> index into level k-1
    labels: tuple[npt.NDArray[np.int64], ...]  # level k >= 1 -> support index of the branch taken
    probs: tuple[Array, ...]  # absolute node probabilities, levels 0..N

    def level_size(self, k: int) -> int:
        return int(self.probs[k].shape[0])

    @property
    def control_nodes(self) -> int:
        return sum(self.level_size(k) for k in range(self.horizon))

    def level_moments(self, k: int) -> tuple[Array, Array]:
        """Mean and second moment of (w_k, v_k) over the children of level k."""
        law = self.branches[k]
        pts = law.points[self.labels[k + 1]]
        p = self.probs[k + 1]
        return p @ pts, (pts * p[:, None]).T @ pts


@dataclass(frozen=True, slots=True)
class StackedQuadratic:
    """J(zeta_x, zeta_y, u) as a quadratic form in the node controls and initial data."""
    control_dim: int
    state_dim: int
    dim_u: int
    Theta1: Array  # (nJ, d)
    Theta2: Array  # (d, d)
    Theta3: Array  # (nJ, d)
    Lambda1: Array  # (nJ, nJ)
    Lambda2: Array  # (nJ, nJ), acts zeta_x -> zeta_y
    Lambda3: Array  # (nJ, nJ)
    zeta_x: Array  # stacked initial support values (nJ,)
    zeta_y: Array
    offsets: tuple[int, ...]  # start of each level's controls in u
    state_x: tuple[Array, ...]  # per level (L_k, n, dim xi)
    state_y: tuple[Array, ...]
    probs: tuple[Array, ...]


@dataclass(frozen=True, slots=True)
class OracleSolution:
    controls: Array  # (d,)
    value: float


def _as_law(law: FiniteLaw | InitialLaw) -> FiniteLaw:
    return law if isinstance(law, FiniteLaw) else law.finite_law()


def build_tree(spec: AnyProblem, noise: NoiseLaw, initial: FiniteLaw | InitialLaw,
               config: SolverConfig | None = None) -> ScenarioTree:
    """Full scenario tree of depth N over the noise support points."""
    cfg = config or DEFAULT_CONFIG
    N, n, m = spec.horizon, spec.state_dim, spec.control_dim
    init = _as_law(initial)
    if init.points.shape[1] != 2 * n:
        raise DimensionMismatch(f"initial law has dimension {init.points.shape[1]}, expected {2 * n}")
    branches = tuple(noise.finite_law(k) for k in range(N))

    sizes = [init.size]
    for law in branches:
        sizes.append(sizes[-1] * law.size)
    n_controls = sum(sizes[:-1]) * m
    if sizes[-1] * m > cfg.max_tree_size or n_controls + 2 * n * init.size > cfg.max_dense_dim:
        raise TreeTooLarge(
            f"tree with {sizes[-1]} leaves and {n_controls} control variables exceeds the dense guard"
        )

    parents, labels, probs = [np.zeros(0, dtype=np.int64)], [np.zeros(0, dtype=np.int64)], [init.probs.copy()]
    for k, law in enumerate(branches):
        L, S = sizes[k], law.size
        parents.append(np.repeat(np.arange(L), S))
        labels.append(np.tile(np.arange(S), L))
        probs.append(np.repeat(probs[-1], S) * np.tile(law.probs, L))
    logger.debug("scenario tree: level sizes %s", sizes)
    return ScenarioTree(N, init, branches, tuple(parents), tuple(labels), tuple(probs))


def _weighted_quadratic(p: Array, X: Array, W: Array) -> Array:
    return np.einsum("l,lad,ab,lbe->de", p, X, W, X, optimize=True)


def _channel_loads(spec: AnyProblem, k: int):
    mats = (spec.C[k], spec.C_bar[k], spec.D[k], spec.D_bar[k], spec.G[k], spec.G_bar[k])
    if spec.C.ndim == 3:
        return tuple(M[None] for M in mats)
    return mats


def assemble_quadratic(tree: ScenarioTree, spec: AnyProblem) -> StackedQuadratic:
    """Forward substitution of the dynamics along every path of the tree."""
    N, n, m = spec.horizon, spec.state_dim, spec.control_dim
    J = tree.initial.size
    offsets = [0]
    for k in range(N):
        offsets.append(offsets[-1] + m * tree.level_size(k))
    d = offsets[-1]
    dim = d + 2 * n * J
    zx0, zy0 = d, d + n * J

    X = np.zeros((J, n, dim))
    Y = np.zeros((J, n, dim))
    for j in range(J):
        X[j, :, zx0 + j * n: zx0 + (j + 1) * n] = np.eye(n)
        Y[j, :, zy0 + j * n: zy0 + (j + 1) * n] = np.eye(n)

    M = np.zeros((dim, dim))
    xs, ys = [X], [Y]
    for k in range(N + 1):
        p = tree.probs[k]
        EX = np.einsum("l,lnd->nd", p, X)
        EY = np.einsum("l,lnd->nd", p, Y)
        M += _weighted_quadratic(p, X - Y, spec.Q[k]) + (EX - EY).T @ spec.Q_bar[k] @ (EX - EY)
        if k == N:
            break
        L = tree.level_size(k)
        U = np.zeros((L, m, dim))
        for i in range(L):
            U[i, :, offsets[k] + i * m: offsets[k] + (i + 1) * m] = np.eye(m)
        EU = np.einsum("l,lnd->nd", p, U)
        M += _weighted_quadratic(p, U, spec.R[k]) + EU.T @ spec.R_bar[k] @ EU

        law = tree.branches[k]
        nz = law.points.shape[1] // 2
        w = law.points[tree.labels[k + 1], :nz]
        v = law.points[tree.labels[k + 1], nz:]
        Xp, Yp, Up = X[tree.parents[k + 1]], Y[tree.parents[k + 1]], U[tree.parents[k + 1]]
        C, Cb, D, Db, G, Gb = _channel_loads(spec, k)
        x_load = (np.einsum("cab,lbd->lcad", C, Xp) + np.einsum("cab,bd->cad", Cb, EX)[None]
                  + np.einsum("cab,lbd->lcad", D, Up) + np.einsum("cab,bd->cad", Db, EU)[None])
        y_load = np.einsum("cab,lbd->lcad", G, Yp) + np.einsum("cab,bd->cad", Gb, EY)[None]
        X = (np.einsum("ab,lbd->lad", spec.A[k], Xp) + (spec.A_bar[k] @ EX)[None]
             + np.einsum("ab,lbd->lad", spec.B[k], Up) + (spec.B_bar[k] @ EU)[None]
             + np.einsum("lc,lcad->lad", w, x_load))
        Y = (np.einsum("ab,lbd->lad", spec.F[k], Yp) + (spec.F_bar[k] @ EY)[None]
             + np.einsum("lc,lcad->lad", v, y_load))
        xs.append(X)
        ys.append(Y)

    M = symmetrize(M)
    u_sl, zx_sl, zy_sl = slice(0, d), slice(zx0, zy0), slice(zy0, dim)
    init = tree.initial.points
    return StackedQuadratic(
        control_dim=m, state_dim=n, dim_u=d,
        Theta1=M[zx_sl, u_sl], Theta2=M[u_sl, u_sl], Theta3=M[zy_sl, u_sl],
        Lambda1=M[zx_sl, zx_sl], Lambda2=M[zy_sl, zx_sl], Lambda3=M[zy_sl, zy_sl],
        zeta_x=init[:, :n].reshape(-1), zeta_y=init[:, n:].reshape(-1),
        offsets=tuple(offsets), state_x=tuple(xs), state_y=tuple(ys), probs=tree.probs,
    )


def check_theta2_psd(quad: StackedQuadratic, config: SolverConfig | None = None) -> tuple[bool, float]:
    cfg = config or DEFAULT_CONFIG
    if quad.dim_u == 0:
        return True, 0.0
    eig = eigvalsh(quad.Theta2)
    lam = float(eig[0])
    scale = max(1.0, float(np.max(np.abs(eig))))
    return lam >= -cfg.psd_tol * scale, lam


def brute_force_optimal(quad: StackedQuadratic, zeta_x: Array | None = None, zeta_y: Array | None = None,
                        config: SolverConfig | None = None) -> OracleSolution:
    """Minimize the stacked quadratic over all node controls."""
    cfg = config or DEFAULT_CONFIG
    zx = quad.zeta_x if zeta_x is None else np.asarray(zeta_x, dtype=np.float64).reshape(-1)
    zy = quad.zeta_y if zeta_y is None else np.asarray(zeta_y, dtype=np.float64).reshape(-1)
    ok, lam = is_pd(quad.Theta2, cfg.pd_rel_tol)
    if not ok:
        raise SingularTheta2(lam)
    factor = spd_factor(quad.Theta2, "Theta2", 0, cfg.pd_rel_tol)
    b = quad.Theta1.T @ zx + quad.Theta3.T @ zy
    u = -spd_solve(factor, b)
    const = zx @ quad.Lambda1 @ zx + 2.0 * zy @ quad.Lambda2 @ zx + zy @ quad.Lambda3 @ zy
    value = float(u @ quad.Theta2 @ u + 2.0 * b @ u + const)
    return OracleSolution(u, value)


def node_states(quad: StackedQuadratic, controls: Array) -> list[tuple[Array, Array]]:
    """(x, y) at every node, level by level, for the given node controls."""
    xi = np.concatenate([controls, quad.zeta_x, quad.zeta_y])
    return [(X @ xi, Y @ xi) for X, Y in zip(quad.state_x, quad.state_y)]


def node_controls(quad: StackedQuadratic, controls: Array) -> list[Array]:
    m = quad.control_dim
    return [controls[lo:hi].reshape(-1, m) for lo, hi in zip(quad.offsets[:-1], quad.offsets[1:])]


def policy_gap(quad: StackedQuadratic, controls: Array, policy: FeedbackPolicy) -> float:
    """Largest deviation between node controls and the feedback law at the node states."""
    states = node_states(quad, controls)
    worst = 0.0
    for k, u_k in enumerate(node_controls(quad, controls)):
        x, y = states[k]
        p = quad.probs[k]
        u_fb = control_action(policy, k, x, p @ x, y, p @ y)
        worst = max(worst, float(np.max(np.abs(u_fb - u_k))))
    return worst


def evaluate_policy(tree: ScenarioTree, spec: AnyProblem, policy: FeedbackPolicy) -> float:
    """Exact expected cost of a linear feedback policy on the tree."""
    N, n = spec.horizon, spec.state_dim
    x = tree.initial.points[:, :n]
    y = tree.initial.points[:, n:]
    total = 0.0
    for k in range(N + 1):
        p = tree.probs[k]
        Ex, Ey = p @ x, p @ y
        dc, Ed = (x - y) - (Ex - Ey), Ex - Ey
        total += float(p @ np.einsum("li,ij,lj->l", dc, spec.Q[k], dc) + Ed @ (spec.Q[k] + spec.Q_bar[k]) @ Ed)
        if k == N:
            break
        u = control_action(policy, k, x, Ex, y, Ey)
        Eu = p @ u
        uc = u - Eu
        total += float(p @ np.einsum("li,ij,lj->l", uc, spec.R[k], uc) + Eu @ (spec.R[k] + spec.R_bar[k]) @ Eu)

        law = tree.branches[k]
        nz = law.points.shape[1] // 2
        w = law.points[tree.labels[k + 1], :nz]
        v = law.points[tree.labels[k + 1], nz:]
        par = tree.parents[k + 1]
        xp, yp, up = x[par], y[par], u[par]
        C, Cb, D, Db, G, Gb = _channel_loads(spec, k)
        x_noise = (np.einsum("cab,lb->lca", C, xp) + (Cb @ Ex)[None] + np.einsum("cab,lb->lca", D, up)
                   + (Db @ Eu)[None])
        y_noise = np.einsum("cab,lb->lca", G, yp) + (Gb @ Ey)[None]
        x = (xp @ spec.A[k].T + spec.A_bar[k] @ Ex + up @ spec.B[k].T + spec.B_bar[k] @ Eu
             + np.einsum("lc,lca->la", w, x_noise))
        y = yp @ spec.F[k].T + spec.F_bar[k] @ Ey + np.einsum("lc,lca->la", v, y_noise)
    return total
