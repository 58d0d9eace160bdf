"""
Monte Carlo simulation of the closed-loop mean-field system.

Every path draws its initial state and its noises from its own Philox
stream: the key comes from the seed and the path index sits in the top
word of the counter. A path's draws therefore do not depend on n_paths,
the block size or the number of worker threads. Blocks of paths are drawn
on a thread pool; the state recursion then runs vectorized over all paths.

The mean-field terms E x_k, E y_k, E u_k come from the analytic expected
trajectory of the policy. With population_coupling=True they are replaced
by cross-path averages instead.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from tqdm import tqdm

from mflq.control.policy import control_action, trajectory_under_policy
from mflq.core.errors import InvalidRequest, NonFinite
from mflq.core.interfaces import InitialLaw, NoiseLaw
from mflq.core.models import DEFAULT_CONFIG, AnyProblem, FeedbackPolicy, SimulationResult, SolverConfig

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class _BlockDraws:
    x0: npt.NDArray[np.float64]  # (b, n)
    y0: npt.NDArray[np.float64]
    w: npt.NDArray[np.float64]  # (N, b, p)
    v: npt.NDArray[np.float64]


def stream_key(seed: int) -> npt.NDArray[np.uint64]:
    return np.random.SeedSequence(seed).generate_state(2, np.uint64)


def path_generator(key: npt.NDArray[np.uint64], path: int) -> np.random.Generator:
    """Stream of one path, keyed by the seed and counted from the path index."""
    return np.random.Generator(np.random.Philox(key=key, counter=path << 192))


def _draw_block(key: npt.NDArray[np.uint64], start: int, size: int, horizon: int,
                init: InitialLaw, noise: NoiseLaw) -> _BlockDraws:
    n, p = init.moments.dim, noise.noise_dim
    x0, y0 = np.zeros((size, n)), np.zeros((size, n))
    w, v = np.zeros((horizon, size, p)), np.zeros((horizon, size, p))
    for j in range(size):
        rng = path_generator(key, start + j)
        xs, ys = init.sample(rng, 1)
        x0[j], y0[j] = xs[0], ys[0]
        for k in range(horizon):
            wk, vk = noise.sample(rng, k, 1)
            w[k, j], v[k, j] = wk[0], vk[0]
    return _BlockDraws(x0, y0, w, v)


def _channels(spec: AnyProblem, k: int):
    """Noise loadings with a leading channel axis, (p, n, .)."""
    mats = (spec.C[k], spec.C_bar[k], spec.D[k], spec.D_bar[k], spec.G[k], spec.G_bar[k])
    if spec.C.ndim == 3:
        return tuple(M[None] for M in mats)
    return mats


def _noise_term(w: np.ndarray, loads: np.ndarray, X: np.ndarray) -> np.ndarray:
    """sum_i w_i (L_i x) for a batch: w (P, p), loads (p, n, d), X (P, d) or (d,)."""
    if X.ndim == 1:
        return w @ np.einsum("ind,d->in", loads, X)
    return np.einsum("pi,ind,pd->pn", w, loads, X)


def _check_costs(costs: npt.NDArray[np.float64], k: int) -> None:
    bad = ~np.isfinite(costs)
    if np.any(bad):
        raise NonFinite(int(np.argmax(bad)), k)


def estimate_cost(costs: npt.ArrayLike) -> tuple[float, float]:
    """Sample mean and standard error (ddof=1) of per-path realized costs."""
    costs = np.asarray(costs, dtype=np.float64)
    if costs.size < 2:
        raise InvalidRequest("at least two paths are needed for a standard error")
    return float(costs.mean()), float(costs.std(ddof=1) / np.sqrt(costs.size))


def simulate_closed_loop(spec: AnyProblem, policy: FeedbackPolicy, init_sampler: InitialLaw, noise: NoiseLaw,
                         n_paths: int, seed: int, *, population_coupling: bool = False,
                         config: SolverConfig | None = None, progress: bool = False) -> SimulationResult:
    """Simulate n_paths closed-loop paths and their realized costs."""
    cfg = config or DEFAULT_CONFIG
    if n_paths < 2:
        raise InvalidRequest(f"n_paths must be at least 2, got {n_paths}")
    N, n = spec.horizon, spec.state_dim
    moments = init_sampler.moments
    expected = trajectory_under_policy(spec, policy, moments.mean_x, moments.mean_y)

    key = stream_key(seed)
    starts = range(0, n_paths, cfg.block_size)
    logger.info("simulating %d paths in %d blocks (seed=%d)", n_paths, len(starts), seed)
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        jobs = pool.map(
            lambda s: _draw_block(key, s, min(cfg.block_size, n_paths - s), N, init_sampler, noise), starts)
        blocks = list(tqdm(jobs, total=len(starts), desc="noise blocks", unit="block", disable=not progress))

    x = np.concatenate([b.x0 for b in blocks])
    y = np.concatenate([b.y0 for b in blocks])
    w = np.concatenate([b.w for b in blocks], axis=1)
    v = np.concatenate([b.v for b in blocks], axis=1)

    costs = np.zeros(n_paths)
    mean_x = np.zeros((N + 1, n))
    mean_y = np.zeros((N + 1, n))
    for k in range(N + 1):
        mean_x[k], mean_y[k] = x.mean(axis=0), y.mean(axis=0)
        if population_coupling:
            Ex, Ey = mean_x[k], mean_y[k]
        else:
            Ex, Ey = expected.Ex[k], expected.Ey[k]
        d, Ed = x - y, Ex - Ey
        dc = d - Ed
        Q, QQ = spec.Q[k], spec.Q[k] + spec.Q_bar[k]
        costs += np.einsum("pi,ij,pj->p", dc, Q, dc) + Ed @ QQ @ Ed
        _check_costs(costs, k)
        if k == N:
            break

        u = control_action(policy, k, x, Ex, y, Ey)
        Eu = u.mean(axis=0) if population_coupling else expected.Eu[k]
        uc = u - Eu
        costs += np.einsum("pi,ij,pj->p", uc, spec.R[k], uc) + Eu @ (spec.R[k] + spec.R_bar[k]) @ Eu
        _check_costs(costs, k)

        C, Cb, D, Db, G, Gb = _channels(spec, k)
        x_next = (x @ spec.A[k].T + Ex @ spec.A_bar[k].T + u @ spec.B[k].T + Eu @ spec.B_bar[k].T
                  + _noise_term(w[k], C, x) + _noise_term(w[k], Cb, Ex)
                  + _noise_term(w[k], D, u) + _noise_term(w[k], Db, Eu))
        y_next = (y @ spec.F[k].T + Ey @ spec.F_bar[k].T
                  + _noise_term(v[k], G, y) + _noise_term(v[k], Gb, Ey))
        bad = ~(np.all(np.isfinite(x_next), axis=1) & np.all(np.isfinite(y_next), axis=1))
        if np.any(bad):
            raise NonFinite(int(np.argmax(bad)), k + 1)
        x, y = x_next, y_next

    cost_mean, cost_std_err = estimate_cost(costs)
    logger.info("cost %.6g +- %.3g", cost_mean, cost_std_err)
    return SimulationResult(
        n_paths=n_paths, seed=seed, terminal_x=x, terminal_y=y, costs=costs,
        cost_mean=cost_mean, cost_std_err=cost_std_err, mean_x=mean_x, mean_y=mean_y,
        expected=expected, population_coupling=population_coupling,
    )

