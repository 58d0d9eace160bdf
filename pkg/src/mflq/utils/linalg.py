"""Small dense linear-algebra helpers shared by the solvers."""
import numpy as np
import numpy.typing as npt
from scipy.linalg import cho_factor, cho_solve, eigh, eigvalsh

from mflq.core.errors import NotPositiveDefinite

Matrix = npt.NDArray[np.float64]


def symmetrize(M: Matrix) -> Matrix:
    return 0.5 * (M + M.T)


def min_eigenvalue(M: Matrix) -> float:
    if M.size == 0:
        return 0.0
    return float(eigvalsh(symmetrize(M))[0])


def spectral_scale(M: Matrix) -> float:
    """max(1, |M|_2) for a symmetric matrix."""
    if M.size == 0:
        return 1.0
    eig = eigvalsh(symmetrize(M))
    return max(1.0, float(np.max(np.abs(eig))))


def is_psd(M: Matrix, tol: float) -> tuple[bool, float]:
    lam = min_eigenvalue(M)
    return lam >= -tol * spectral_scale(M), lam


def is_pd(M: Matrix, rel_tol: float) -> tuple[bool, float]:
    """Strict positivity: lambda_min > rel_tol * (1 + |M|_2)."""
    if M.size == 0:
        return True, 0.0
    eig = eigvalsh(symmetrize(M))
    lam = float(eig[0])
    return lam > rel_tol * (1.0 + float(np.max(np.abs(eig)))), lam


def spd_factor(W: Matrix, which: str, k: int, rel_tol: float = 1e-12) -> tuple[Matrix, bool]:
    """Cholesky factor of W, raising NotPositiveDefinite below the relative threshold."""
    ok, lam = is_pd(W, rel_tol)
    if not ok:
        raise NotPositiveDefinite(which, k, lam)
    try:
        return cho_factor(symmetrize(W), lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(which, k, lam) from None


def spd_solve(factor: tuple[Matrix, bool], rhs: Matrix) -> Matrix:
    return cho_solve(factor, rhs, check_finite=False)


def moment_factor(second_moment: Matrix, rel_tol: float = 1e-12) -> Matrix:
    """L with L L^T = second_moment, keeping only the numerically positive spectrum.

    The returned factor has shape (d, r) where r is the numerical rank.
    """
    lam, vec = eigh(symmetrize(second_moment))
    cutoff = rel_tol * max(1.0, float(np.max(np.abs(lam)))) if lam.size else 0.0
    keep = lam > cutoff
    return vec[:, keep] * np.sqrt(lam[keep])
