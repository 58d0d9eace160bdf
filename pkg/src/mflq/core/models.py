"""Data model for mean-field LQ problems, their Riccati solutions and policies.

Time-indexed matrices are stored as stacked arrays with the step index on
axis 0: dynamics and control weights have N entries, state weights have
N + 1 (the last one is the terminal weight).
"""
import logging
import os
from dataclasses import dataclass, field, fields
from typing import ClassVar

import numpy as np
import numpy.typing as npt

from mflq.core.errors import DimensionMismatch, InvalidMoment, InvalidRequest, ProblemFormatError

logger = logging.getLogger(__name__)

# Type aliases for clarity
Vector = npt.NDArray[np.float64]  # (n,)
Matrix = npt.NDArray[np.float64]  # (n, n)
MatrixSeq = npt.NDArray[np.float64]  # (N, n, n) or (N + 1, n, n)


def _as_frozen(value: npt.ArrayLike, name: str) -> npt.NDArray[np.float64]:
    arr = np.array(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ProblemFormatError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _check_shape(arr: np.ndarray, expected: tuple[int, ...], name: str) -> None:
    if arr.shape != expected:
        raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {expected}")


def _symmetrized(arr: np.ndarray, name: str, warn_at: float) -> np.ndarray:
    sym = 0.5 * (arr + np.swapaxes(arr, -1, -2))
    asym = float(np.max(np.abs(arr - sym))) if arr.size else 0.0
    if asym > warn_at:
        logger.warning("%s is not symmetric (max deviation %.3e); using its symmetric part", name, asym)
    sym.setflags(write=False)
    return sym


@dataclass(slots=True)
class SolverConfig:
    """Numerical tolerances and Monte-Carlo defaults."""
    asymmetry_warn: float = 1e-9
    psd_tol: float = 1e-10  # lambda_min >= -psd_tol * scale
    pd_rel_tol: float = 1e-12  # lambda_min > pd_rel_tol * scale
    range_tol: float = 1e-10  # |M M^+ c - c| <= range_tol * |c|
    n_paths: int = 10_000
    sampler: str = "gaussian"
    block_size: int = 1024  # paths per thread-pool job
    threads: int | None = None
    max_tree_size: int = 10**6
    max_dense_dim: int = 4000

    @classmethod
    def from_env(cls) -> "SolverConfig":
        """Defaults, with the worker cap taken from MFLQ_THREADS when set."""
        raw = os.environ.get("MFLQ_THREADS")
        threads = None
        if raw:
            try:
                threads = max(1, int(raw))
            except ValueError:
                logger.warning("ignoring MFLQ_THREADS=%r (not an integer)", raw)
        return cls(threads=threads)


DEFAULT_CONFIG = SolverConfig()


@dataclass(frozen=True, slots=True)
class ProblemSpec:
    """Mean-field LQ problem driven by one scalar noise pair (w, v), E[wv] = rho."""
    horizon: int
    state_dim: int
    control_dim: int
    A: MatrixSeq
    A_bar: MatrixSeq
    B: MatrixSeq
    B_bar: MatrixSeq
    C: MatrixSeq
    C_bar: MatrixSeq
    D: MatrixSeq
    D_bar: MatrixSeq
    F: MatrixSeq
    F_bar: MatrixSeq
    G: MatrixSeq
    G_bar: MatrixSeq
    Q: MatrixSeq
    Q_bar: MatrixSeq
    R: MatrixSeq
    R_bar: MatrixSeq
    rho: float = 0.0

    STATE_MATRICES: ClassVar[tuple[str, ...]] = ("A", "A_bar", "C", "C_bar", "F", "F_bar", "G", "G_bar")
    CONTROL_MATRICES: ClassVar[tuple[str, ...]] = ("B", "B_bar", "D", "D_bar")
    WEIGHTS: ClassVar[tuple[str, ...]] = ("Q", "Q_bar", "R", "R_bar")

    def __post_init__(self) -> None:
        N, n, m = self.horizon, self.state_dim, self.control_dim
        if N < 1 or n < 1 or m < 1:
            raise DimensionMismatch(f"dimensions must be positive, got N={N}, n={n}, m={m}")
        for name in self.STATE_MATRICES:
            arr = _as_frozen(getattr(self, name), name)
            _check_shape(arr, (N, n, n), name)
            object.__setattr__(self, name, arr)
        for name in self.CONTROL_MATRICES:
            arr = _as_frozen(getattr(self, name), name)
            _check_shape(arr, (N, n, m), name)
            object.__setattr__(self, name, arr)
        for name, shape in (("Q", (N + 1, n, n)), ("Q_bar", (N + 1, n, n)), ("R", (N, m, m)), ("R_bar", (N, m, m))):
            arr = _as_frozen(getattr(self, name), name)
            _check_shape(arr, shape, name)
            object.__setattr__(self, name, _symmetrized(arr, name, DEFAULT_CONFIG.asymmetry_warn))
        rho = float(self.rho)
        if not np.isfinite(rho) or abs(rho) > 1.0:
            raise InvalidMoment(None, lambda_min=1.0 - abs(rho))
        object.__setattr__(self, "rho", rho)

    @property
    def noise_dim(self) -> int:
        return 1


@dataclass(frozen=True, slots=True)
class MultiNoiseProblemSpec:
    """Mean-field LQ problem driven by p noise pairs (w^i, v^i).

    Channel-indexed matrices carry the channel on axis 1, e.g. C has shape
    (N, p, n, n). The second moments of the noise used in the transition
    k -> k+1 are alpha[k] = E[w w^T], beta[k] = E[v v^T] and
    gamma[k] = E[w v^T].
    """
    horizon: int
    state_dim: int
    control_dim: int
    noise_dim: int
    A: MatrixSeq
    A_bar: MatrixSeq
    B: MatrixSeq
    B_bar: MatrixSeq
    C: npt.NDArray[np.float64]
    C_bar: npt.NDArray[np.float64]
    D: npt.NDArray[np.float64]
    D_bar: npt.NDArray[np.float64]
    F: MatrixSeq
    F_bar: MatrixSeq
    G: npt.NDArray[np.float64]
    G_bar: npt.NDArray[np.float64]
    Q: MatrixSeq
    Q_bar: MatrixSeq
    R: MatrixSeq
    R_bar: MatrixSeq
    alpha: MatrixSeq
    beta: MatrixSeq
    gamma: MatrixSeq

    def __post_init__(self) -> None:
        N, n, m, p = self.horizon, self.state_dim, self.control_dim, self.noise_dim
        if N < 1 or n < 1 or m < 1 or p < 1:
            raise DimensionMismatch(f"dimensions must be positive, got N={N}, n={n}, m={m}, p={p}")
        shapes = {
            "A": (N, n, n), "A_bar": (N, n, n), "B": (N, n, m), "B_bar": (N, n, m),
            "C": (N, p, n, n), "C_bar": (N, p, n, n), "D": (N, p, n, m), "D_bar": (N, p, n, m),
            "F": (N, n, n), "F_bar": (N, n, n), "G": (N, p, n, n), "G_bar": (N, p, n, n),
            "gamma": (N, p, p),
        }
        for name, shape in shapes.items():
            arr = _as_frozen(getattr(self, name), name)
            _check_shape(arr, shape, name)
            object.__setattr__(self, name, arr)
        sym_shapes = {
            "Q": (N + 1, n, n), "Q_bar": (N + 1, n, n), "R": (N, m, m), "R_bar": (N, m, m),
            "alpha": (N, p, p), "beta": (N, p, p),
        }
        for name, shape in sym_shapes.items():
            arr = _as_frozen(getattr(self, name), name)
            _check_shape(arr, shape, name)
            object.__setattr__(self, name, _symmetrized(arr, name, DEFAULT_CONFIG.asymmetry_warn))

    def joint_moment(self, k: int) -> Matrix:
        """Second moment of the stacked noise (w_k, v_k), shape (2p, 2p)."""
        return np.block([[self.alpha[k], self.gamma[k]], [self.gamma[k].T, self.beta[k]]])


@dataclass(frozen=True, slots=True)
class InitialMoments:
    """First and second moments of the initial pair (zeta_x, zeta_y)."""
    mean_x: Vector
    mean_y: Vector
    cov_x: Matrix
    cov_y: Matrix
    cov_xy: Matrix  # E[(zeta_x - E zeta_x)(zeta_y - E zeta_y)^T]

    def __post_init__(self) -> None:
        mean_x = _as_frozen(np.atleast_1d(self.mean_x), "mean_x")
        n = mean_x.shape[0]
        object.__setattr__(self, "mean_x", mean_x)
        mean_y = _as_frozen(np.atleast_1d(self.mean_y), "mean_y")
        _check_shape(mean_y, (n,), "mean_y")
        object.__setattr__(self, "mean_y", mean_y)
        for name in ("cov_x", "cov_y", "cov_xy"):
            arr = _as_frozen(np.atleast_2d(getattr(self, name)), name)
            _check_shape(arr, (n, n), name)
            if name != "cov_xy":
                arr = _symmetrized(arr, name, DEFAULT_CONFIG.asymmetry_warn)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return int(self.mean_x.shape[0])

    def joint_cov(self) -> Matrix:
        return np.block([[self.cov_x, self.cov_xy], [self.cov_xy.T, self.cov_y]])

    @classmethod
    def standard(cls, n: int) -> "InitialMoments":
        """Zero means, identity covariances, uncorrelated x and y."""
        return cls(np.zeros(n), np.zeros(n), np.eye(n), np.eye(n), np.zeros((n, n)))

    @classmethod
    def deterministic(cls, x0: npt.ArrayLike, y0: npt.ArrayLike) -> "InitialMoments":
        x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
        n = x0.shape[0]
        zero = np.zeros((n, n))
        return cls(x0, np.atleast_1d(y0), zero, zero, zero)


@dataclass(frozen=True, slots=True)
class FiniteLaw:
    """A finitely supported distribution: points (S, d) with probabilities (S,)."""
    points: npt.NDArray[np.float64]
    probs: npt.NDArray[np.float64]

    def __post_init__(self) -> None:
        points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.shape != (points.shape[0],):
            raise DimensionMismatch(f"{probs.shape[0]} probabilities for {points.shape[0]} support points")
        if np.any(probs < 0.0) or abs(float(probs.sum()) - 1.0) > 1e-12:
            raise InvalidRequest("probabilities must be non-negative and sum to one")
        keep = probs > 0.0
        points, probs = points[keep], probs[keep]
        points.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "probs", probs)

    @property
    def size(self) -> int:
        return int(self.probs.shape[0])

    def mean(self) -> Vector:
        return self.probs @ self.points

    def second_moment(self) -> Matrix:
        return (self.points * self.probs[:, None]).T @ self.points


@dataclass(frozen=True, slots=True)
class ValidationViolation:
    condition: str  # "Q_psd", "Q_plus_Qbar_psd", "R_pd", "R_plus_Rbar_pd", "noise_moment_psd"
    k: int
    lambda_min: float


@dataclass(frozen=True, slots=True)
class ValidationReport:
    violations: tuple[ValidationViolation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True, slots=True)
class RiccatiSolution:
    """Centered (S) and mean (T) Riccati sequences plus the per-step W and H factors."""
    Sx: MatrixSeq
    Tx: MatrixSeq
    Sxy: MatrixSeq
    Txy: MatrixSeq
    Sy: MatrixSeq
    Ty: MatrixSeq
    W1: MatrixSeq
    W2: MatrixSeq
    H1: MatrixSeq
    H2: MatrixSeq
    H3: MatrixSeq
    H4: MatrixSeq

    def __post_init__(self) -> None:
        for f in fields(self):
            getattr(self, f.name).setflags(write=False)

    @property
    def horizon(self) -> int:
        return int(self.W1.shape[0])


@dataclass(frozen=True, slots=True)
class PFormSolution:
    """Compact-form sequences P, P-bar and the uncentered feedback gains."""
    Px: MatrixSeq
    Px_bar: MatrixSeq
    Pxy: MatrixSeq
    Pxy_bar: MatrixSeq
    Py: MatrixSeq
    Py_bar: MatrixSeq
    Lx: MatrixSeq
    Lx_bar: MatrixSeq
    Ly: MatrixSeq
    Ly_bar: MatrixSeq
    W1: MatrixSeq = field(repr=False)
    W2: MatrixSeq = field(repr=False)

    def __post_init__(self) -> None:
        for f in fields(self):
            getattr(self, f.name).setflags(write=False)

    @property
    def horizon(self) -> int:
        return int(self.Lx.shape[0])


@dataclass(frozen=True, slots=True)
class FeedbackPolicy:
    """u_k = Kx (x - Ex) + Kx_bar Ex + Ky (y - Ey) + Ky_bar Ey, gains of shape (N, m, n)."""
    Kx: MatrixSeq
    Kx_bar: MatrixSeq
    Ky: MatrixSeq
    Ky_bar: MatrixSeq

    def __post_init__(self) -> None:
        for f in fields(self):
            arr = np.array(getattr(self, f.name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, f.name, arr)

    @property
    def horizon(self) -> int:
        return int(self.Kx.shape[0])

    def uncentered(self) -> tuple[MatrixSeq, MatrixSeq, MatrixSeq, MatrixSeq]:
        """Gains for the form u = Lx x + Lx_bar Ex + Ly y + Ly_bar Ey."""
        return self.Kx, self.Kx_bar - self.Kx, self.Ky, self.Ky_bar - self.Ky


@dataclass(frozen=True, slots=True)
class ExpectedTrajectory:
    """Closed-loop means and the factors of E x_{k+1} = N_k E x_k + M_k E y_k, E y_{k+1} = O_k E y_k."""
    Ex: npt.NDArray[np.float64]  # (N + 1, n)
    Ey: npt.NDArray[np.float64]  # (N + 1, n)
    Eu: npt.NDArray[np.float64]  # (N, m)
    N_factors: MatrixSeq
    M_factors: MatrixSeq
    O_factors: MatrixSeq


@dataclass(frozen=True, slots=True)
class SimulationResult:
    n_paths: int
    seed: int
    terminal_x: npt.NDArray[np.float64]  # (P, n)
    terminal_y: npt.NDArray[np.float64]
    costs: npt.NDArray[np.float64]  # (P,)
    cost_mean: float
    cost_std_err: float
    mean_x: npt.NDArray[np.float64]  # cross-path average, (N + 1, n)
    mean_y: npt.NDArray[np.float64]
    expected: ExpectedTrajectory
    population_coupling: bool = False


AnyProblem = ProblemSpec | MultiNoiseProblemSpec


def lift_problem(spec: ProblemSpec) -> MultiNoiseProblemSpec:
    """View a scalar-noise problem as a one-channel multinoise problem."""
    N = spec.horizon
    ones = np.ones((N, 1, 1))
    return MultiNoiseProblemSpec(
        horizon=N,
        state_dim=spec.state_dim,
        control_dim=spec.control_dim,
        noise_dim=1,
        A=spec.A, A_bar=spec.A_bar, B=spec.B, B_bar=spec.B_bar,
        C=spec.C[:, None], C_bar=spec.C_bar[:, None],
        D=spec.D[:, None], D_bar=spec.D_bar[:, None],
        F=spec.F, F_bar=spec.F_bar,
        G=spec.G[:, None], G_bar=spec.G_bar[:, None],
        Q=spec.Q, Q_bar=spec.Q_bar, R=spec.R, R_bar=spec.R_bar,
        alpha=ones, beta=ones, gamma=spec.rho * ones,
    )
