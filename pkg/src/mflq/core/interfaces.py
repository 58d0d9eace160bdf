from typing import Protocol, runtime_checkable

import numpy as np
import numpy.typing as npt

from mflq.core.models import FiniteLaw, InitialMoments


@runtime_checkable
class NoiseLaw(Protocol):
    """Contract for per-step noise pairs (w_k, v_k) usable by the simulator and the oracle."""

    noise_dim: int

    def sample(self, rng: np.random.Generator, k: int, size: int) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        """Draw `size` independent pairs for the transition k -> k+1, each of shape (size, p)."""
        ...

    def finite_law(self, k: int) -> FiniteLaw:
        """A finitely supported law on (w, v) in R^{2p} with the same first two moments."""
        ...


@runtime_checkable
class InitialLaw(Protocol):
    """Contract for the initial pair (zeta_x, zeta_y)."""

    moments: InitialMoments

    def sample(self, rng: np.random.Generator, size: int) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        ...

    def finite_law(self) -> FiniteLaw:
        """A finitely supported law on (zeta_x, zeta_y) in R^{2n}."""
        ...
