"""Random valid problem instances and the three-period ALM reference example."""
import numpy as np

from mflq.core.models import InitialMoments, MultiNoiseProblemSpec, ProblemSpec
from mflq.finance.alm import AlmProblem

# Reference values of the three-period ALM example, k = 0..3 (four decimals).
REFERENCE_S_TABLE: dict[str, tuple[float, ...]] = {
    "Sx": (0.0133, 0.0540, 0.2260, 1.0),
    "Sxy": (-0.0230, -0.0777, -0.2712, -1.0),
    "Sy": (0.0397, 0.1119, 0.3254, 1.0),
}

# Centered gain rows Ox_k (on x - Ex) and Oy_k (on y - Ey), k = 0..2.
# Oy_k = (f Sxy_{k+1} / (a Sx_{k+1})) Ox_k, a factor of -1.727 at k = 0.
REFERENCE_GAIN_TABLE: dict[str, tuple[tuple[float, float, float], ...]] = {
    "Ox": ((-0.0048, -0.0072, -0.0098), (-0.0150, -0.0223, -0.0319), (-0.0300, -0.0429, -0.0730)),
    "Oy": ((0.0083, 0.0125, 0.0169), (0.0216, 0.0321, 0.0460), (0.0359, 0.0515, 0.0876)),
}

# Oy_0 as usually quoted for this example. It reuses the k = 1 ratio 1.44 instead of
# 1.727 and disagrees with REFERENCE_S_TABLE, so it is kept only to document the erratum.
MISQUOTED_OY_0 = (0.0069, 0.0104, 0.0141)


def reference_alm_example() -> AlmProblem:
    """Three periods, three risky assets, a = 0.5, f = 0.6, R = I, q = 1, q_bar = -1."""
    N, m = 3, 3
    mean = np.array([0.2, 0.3, 0.4])
    cov = np.array([[1.0, 0.2, 0.3], [0.2, 1.0, 0.6], [0.3, 0.6, 1.0]])
    return AlmProblem(
        horizon=N, asset_count=m,
        a=np.full(N, 0.5), f=np.full(N, 0.6),
        mean_excess=np.tile(mean, (N, 1)), cov_excess=np.tile(cov, (N, 1, 1)),
        R=np.tile(np.eye(m), (N, 1, 1)), q_N=1.0, q_bar_N=-1.0,
    )


def _psd(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    X = rng.standard_normal((n, n))
    return scale * (X @ X.T) / n


def _weights(rng: np.random.Generator, N: int, n: int, m: int) -> dict[str, np.ndarray]:
    """Q PSD with Q + Q_bar PSD (Q_bar possibly indefinite); R PD with R + R_bar PD."""
    Q = np.stack([_psd(rng, n) for _ in range(N + 1)])
    Q_bar = np.stack([_psd(rng, n, 0.5) - 0.5 * Q[k] for k in range(N + 1)])
    R = np.stack([_psd(rng, m) + 0.5 * np.eye(m) for _ in range(N)])
    R_bar = np.stack([_psd(rng, m, 0.5) - 0.3 * R[k] for k in range(N)])
    return {"Q": Q, "Q_bar": Q_bar, "R": R, "R_bar": R_bar}


def _mats(rng: np.random.Generator, shape: tuple[int, ...], scale: float) -> np.ndarray:
    return scale * rng.standard_normal(shape)


def random_problem(rng: np.random.Generator, n: int, m: int, N: int, rho: float | None = None) -> ProblemSpec:
    """A scalar-noise problem that passes validation."""
    s = 0.5 / np.sqrt(n)
    return ProblemSpec(
        horizon=N, state_dim=n, control_dim=m,
        A=_mats(rng, (N, n, n), s), A_bar=_mats(rng, (N, n, n), 0.5 * s),
        B=_mats(rng, (N, n, m), s), B_bar=_mats(rng, (N, n, m), 0.5 * s),
        C=_mats(rng, (N, n, n), 0.5 * s), C_bar=_mats(rng, (N, n, n), 0.25 * s),
        D=_mats(rng, (N, n, m), 0.5 * s), D_bar=_mats(rng, (N, n, m), 0.25 * s),
        F=_mats(rng, (N, n, n), s), F_bar=_mats(rng, (N, n, n), 0.5 * s),
        G=_mats(rng, (N, n, n), 0.5 * s), G_bar=_mats(rng, (N, n, n), 0.25 * s),
        rho=float(rng.uniform(-0.9, 0.9)) if rho is None else rho,
        **_weights(rng, N, n, m),
    )


def random_joint_moments(rng: np.random.Generator, N: int, p: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(alpha, beta, gamma) per step from a random PSD joint second moment."""
    alpha, beta, gamma = np.zeros((N, p, p)), np.zeros((N, p, p)), np.zeros((N, p, p))
    for k in range(N):
        joint = _psd(rng, 2 * p)
        alpha[k], beta[k], gamma[k] = joint[:p, :p], joint[p:, p:], joint[:p, p:]
    return alpha, beta, gamma


def random_multinoise_problem(rng: np.random.Generator, n: int, m: int, N: int, p: int) -> MultiNoiseProblemSpec:
    s = 0.5 / np.sqrt(n)
    cs = 0.5 * s / np.sqrt(p)
    alpha, beta, gamma = random_joint_moments(rng, N, p)
    return MultiNoiseProblemSpec(
        horizon=N, state_dim=n, control_dim=m, noise_dim=p,
        A=_mats(rng, (N, n, n), s), A_bar=_mats(rng, (N, n, n), 0.5 * s),
        B=_mats(rng, (N, n, m), s), B_bar=_mats(rng, (N, n, m), 0.5 * s),
        C=_mats(rng, (N, p, n, n), cs), C_bar=_mats(rng, (N, p, n, n), 0.5 * cs),
        D=_mats(rng, (N, p, n, m), cs), D_bar=_mats(rng, (N, p, n, m), 0.5 * cs),
        F=_mats(rng, (N, n, n), s), F_bar=_mats(rng, (N, n, n), 0.5 * s),
        G=_mats(rng, (N, p, n, n), cs), G_bar=_mats(rng, (N, p, n, n), 0.5 * cs),
        alpha=alpha, beta=beta, gamma=gamma,
        **_weights(rng, N, n, m),
    )


def random_alm(rng: np.random.Generator, m: int, N: int) -> AlmProblem:
    q = float(rng.uniform(0.2, 2.0))
    return AlmProblem(
        horizon=N, asset_count=m,
        a=rng.uniform(0.8, 1.2, N), f=rng.uniform(0.8, 1.2, N),
        mean_excess=rng.uniform(-0.1, 0.4, (N, m)),
        cov_excess=np.stack([_psd(rng, m, 0.2) for _ in range(N)]),
        R=np.stack([_psd(rng, m) + 0.5 * np.eye(m) for _ in range(N)]),
        q_N=q, q_bar_N=float(rng.uniform(-q, q)),
    )


def random_initial_moments(rng: np.random.Generator, n: int) -> InitialMoments:
    joint = _psd(rng, 2 * n)
    return InitialMoments(
        mean_x=rng.standard_normal(n), mean_y=rng.standard_normal(n),
        cov_x=joint[:n, :n], cov_y=joint[n:, n:], cov_xy=joint[:n, n:],
    )


def random_two_point_initial(rng: np.random.Generator, n: int) -> InitialMoments:
    """Initial moments whose joint covariance has rank one, so the sign law has two points."""
    z = rng.standard_normal(2 * n)
    joint = np.outer(z, z)
    return InitialMoments(
        mean_x=rng.standard_normal(n), mean_y=rng.standard_normal(n),
        cov_x=joint[:n, :n], cov_y=joint[n:, n:], cov_xy=joint[:n, n:],
    )
