"""
Noise and initial-condition samplers.

Only the first two moments of the noise are part of the model; the
samplers below fix a distribution with those moments:

- gaussian: jointly normal with the prescribed second moment,
- rademacher: a finitely supported law with the prescribed second moment.
  For a scalar pair this is the four-point law on (+-1, +-1) with
  P(w = v) = (1 + rho) / 2. For vector noises and initial pairs it is the
  uniform law on the 2^r points L eps, eps in {-1, 1}^r, where L L^T is the
  target second moment and r its rank.

Every sampler also exposes a finite law with the same moments, which is
what the scenario-tree oracle branches on.
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import numpy.typing as npt

from mflq.core.errors import InvalidMoment, InvalidRequest
from mflq.core.models import AnyProblem, FiniteLaw, InitialMoments, Matrix, MultiNoiseProblemSpec
from mflq.utils.linalg import is_psd, moment_factor

logger = logging.getLogger(__name__)

SamplerKind = Literal["gaussian", "rademacher"]
KINDS: tuple[str, ...] = ("gaussian", "rademacher")

# Guard on the 2^r sign law
MAX_SIGN_RANK = 16


def four_point_law(rho: float) -> FiniteLaw:
    """(w, v) in {+-1}^2 with E[w] = E[v] = 0, E[w^2] = E[v^2] = 1, E[wv] = rho."""
    if abs(rho) > 1.0:
        raise InvalidMoment(None, 1.0 - abs(rho))
    points = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    same, diff = (1.0 + rho) / 4.0, (1.0 - rho) / 4.0
    return FiniteLaw(points, np.array([same, same, diff, diff]))


def sign_law(mean: npt.ArrayLike, second_moment: Matrix) -> FiniteLaw:
    """Uniform law on mean + L eps with L L^T = second_moment (centered)."""
    mean = np.asarray(mean, dtype=np.float64)
    L = moment_factor(second_moment)
    r = L.shape[1]
    if r > MAX_SIGN_RANK:
        raise InvalidRequest(f"sign law of rank {r} has too many support points")
    if r == 0:
        return FiniteLaw(mean[None, :], np.ones(1))
    eps = np.array(list(itertools.product((1.0, -1.0), repeat=r)))
    return FiniteLaw(mean + eps @ L.T, np.full(eps.shape[0], 1.0 / eps.shape[0]))


@dataclass(frozen=True, slots=True)
class NoiseSampler:
    """Per-step noise pairs (w_k, v_k), each of dimension p.

    For scalar problems `moments` is None and rho is used; for multinoise
    problems `moments` holds the joint (2p, 2p) second moment for every step.
    """
    kind: SamplerKind
    noise_dim: int
    rho: float = 0.0
    moments: npt.NDArray[np.float64] | None = None  # (N, 2p, 2p)
    _factors: tuple[Matrix, ...] = field(init=False, repr=False, compare=False)
    _laws: tuple[FiniteLaw, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InvalidRequest(f"unknown sampler {self.kind!r}; expected one of {KINDS}")
        if self.moments is not None:
            for k, mom in enumerate(self.moments):
                ok, lam = is_psd(mom, 1e-10)
                if not ok:
                    raise InvalidMoment(k, lam)
        elif abs(self.rho) > 1.0:
            raise InvalidMoment(None, 1.0 - abs(self.rho))
        # cached per step
        factors: tuple[Matrix, ...] = ()
        laws: tuple[FiniteLaw, ...] = ()
        if self.moments is not None:
            factors = tuple(moment_factor(mom) for mom in self.moments)
            if self.kind == "rademacher":
                laws = tuple(sign_law(np.zeros(2 * self.noise_dim), mom) for mom in self.moments)
        object.__setattr__(self, "_factors", factors)
        object.__setattr__(self, "_laws", laws)

    @classmethod
    def for_problem(cls, spec: AnyProblem, kind: SamplerKind = "gaussian") -> "NoiseSampler":
        if isinstance(spec, MultiNoiseProblemSpec):
            moments = np.stack([spec.joint_moment(k) for k in range(spec.horizon)])
            return cls(kind, spec.noise_dim, moments=moments)
        return cls(kind, 1, rho=spec.rho)

    def joint_moment(self, k: int) -> Matrix:
        if self.moments is None:
            return np.array([[1.0, self.rho], [self.rho, 1.0]])
        return self.moments[k]

    def finite_law(self, k: int) -> FiniteLaw:
        if self.moments is None:
            return four_point_law(self.rho)
        if self._laws:
            return self._laws[k]
        return sign_law(np.zeros(2 * self.noise_dim), self.moments[k])

    def sample(self, rng: np.random.Generator, k: int, size: int) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        p = self.noise_dim
        if self.kind == "rademacher":
            law = self.finite_law(k)
            draws = law.points[rng.choice(law.size, size=size, p=law.probs)]
        elif self.moments is None:
            w = rng.standard_normal(size)
            z = rng.standard_normal(size)
            v = self.rho * w + np.sqrt(1.0 - self.rho**2) * z
            return w[:, None], v[:, None]
        else:
            L = self._factors[k]
            draws = rng.standard_normal((size, L.shape[1])) @ L.T
        return draws[:, :p], draws[:, p:]


@dataclass(frozen=True, slots=True)
class InitialSampler:
    """Draws (zeta_x, zeta_y) with the given first and second moments."""
    moments: InitialMoments
    kind: SamplerKind = "gaussian"
    _factor: Matrix = field(init=False, repr=False, compare=False)
    _law: FiniteLaw | None = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InvalidRequest(f"unknown sampler {self.kind!r}; expected one of {KINDS}")
        ok, lam = is_psd(self.moments.joint_cov(), 1e-10)
        if not ok:
            raise InvalidMoment(None, lam)
        object.__setattr__(self, "_factor", moment_factor(self.moments.joint_cov()))
        law = sign_law(self._mean(), self.moments.joint_cov()) if self.kind == "rademacher" else None
        object.__setattr__(self, "_law", law)

    def _mean(self) -> npt.NDArray[np.float64]:
        return np.concatenate([self.moments.mean_x, self.moments.mean_y])

    def finite_law(self) -> FiniteLaw:
        if self._law is not None:
            return self._law
        return sign_law(self._mean(), self.moments.joint_cov())

    def sample(self, rng: np.random.Generator, size: int) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        n = self.moments.dim
        if self.kind == "rademacher":
            law = self.finite_law()
            draws = law.points[rng.choice(law.size, size=size, p=law.probs)]
        else:
            L = self._factor
            draws = self._mean() + rng.standard_normal((size, L.shape[1])) @ L.T
        return draws[:, :n], draws[:, n:]
