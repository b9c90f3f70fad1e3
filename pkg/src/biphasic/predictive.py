"""Posterior predictive simulation, credible bands and coverage curves."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .growth import GrowthDomainError, SolverError, solve
from .likelihood import Trajectory, params_from_free

log = logging.getLogger(__name__)

LEVELS = (50, 90, 95, 99)
BETA_GRID = np.arange(1, 100)


@dataclass
class PredictiveEnsemble:
    sims: np.ndarray  # (draw, time, group), % cover, not clamped to [0, 100]
    times: np.ndarray
    groups: tuple[str, ...]
    levels: tuple[int, ...] = LEVELS
    bands: dict = field(default_factory=dict)  # level -> (lo, hi), each (time, group)
    redraws: int = 0

    @property
    def n_draws(self) -> int:
        return self.sims.shape[0]


def credible_bands(sims: np.ndarray, levels=LEVELS) -> dict:
    """Equal-tailed empirical quantile bands for each level (in percent)."""
    bands = {}
    for level in levels:
        tail = (1.0 - level / 100.0) / 2.0
        lo, hi = np.quantile(sims, [tail, 1.0 - tail], axis=0)
        bands[level] = (lo, hi)
    return bands


def simulate_predictive(
    draws,
    traj: Trajectory,
    n_draws: int,
    rng: np.random.Generator,
    levels=LEVELS,
    max_redraws: int | None = None,
    **solver_kw,
) -> PredictiveEnsemble:
    """Simulate ``n_draws`` datasets: a uniformly chosen posterior draw, solved on
    the trajectory's times, plus Gaussian observation noise with its variances."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[0] == 0:
        raise ValueError("no posterior draws")
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    if draws.shape[1] != 4 * traj.M:
        raise ValueError(f"draws have {draws.shape[1]} columns for a {traj.M}-group trajectory")
    max_redraws = 10 * n_draws if max_redraws is None else max_redraws
    init = traj.initial_state()
    sd = np.sqrt(traj.stderr_var)
    sims = np.empty((n_draws, traj.times.size, traj.M))
    redraws = 0
    i = 0
    while i < n_draws:
        theta = draws[rng.integers(draws.shape[0])]
        try:
            cover = solve(params_from_free(theta, traj.K), init, traj.times, **solver_kw).cover
        except (SolverError, GrowthDomainError) as exc:
            redraws += 1
            log.debug("redrawing after solver failure: %s", exc)
            if redraws > max_redraws:
                raise RuntimeError(f"{redraws} solver failures while simulating {traj.id}") from exc
            continue
        sims[i] = cover + sd * rng.standard_normal(cover.shape)
        i += 1
    return PredictiveEnsemble(sims, traj.times.copy(), traj.groups, tuple(levels),
                              credible_bands(sims, levels), redraws)


def observed_quantile(ensemble: PredictiveEnsemble, traj: Trajectory) -> np.ndarray:
    """Fraction of simulated values at or below each observation; ties count one half."""
    if ensemble.sims.shape[1:] != traj.obs.shape:
        raise ValueError("ensemble was not simulated on this trajectory's times and groups")
    below = (ensemble.sims < traj.obs).sum(axis=0)
    ties = (ensemble.sims == traj.obs).sum(axis=0)
    return (below + 0.5 * ties) / ensemble.n_draws


def smallest_cri(q):
    """Smallest equal-tailed credible level (percent) whose interval contains the observation."""
    q = np.asarray(q, dtype=float)
    if np.any((q < 0) | (q > 1)):
        raise ValueError("quantiles must lie in [0, 1]")
    beta = np.where(q < 0.5, 100.0 * (1.0 - 2.0 * q), 100.0 * (2.0 * q - 1.0))
    # snap floating noise so levels landing exactly on an integer compare exactly
    beta = np.round(beta, 9)
    return float(beta) if beta.ndim == 0 else beta


@dataclass
class CoverageCurve:
    beta_grid: np.ndarray
    p_hat: np.ndarray
    s_hat: np.ndarray
    n_obs: int

    def rows(self):
        for b, p, s in zip(self.beta_grid, self.p_hat, self.s_hat):
            yield int(b), float(p), float(s)


def coverage_curve(betas, beta_grid=BETA_GRID) -> CoverageCurve:
    """Proportion of observations whose smallest containing interval is below each level."""
    betas = np.asarray(betas, dtype=float).ravel()
    if betas.size == 0:
        raise ValueError("coverage curve needs at least one observation")
    n = betas.size
    grid = np.asarray(beta_grid)
    p_hat = (betas[None, :] < grid[:, None]).sum(axis=1) / n
    s_hat = np.sqrt(p_hat * (1.0 - p_hat) / n)
    return CoverageCurve(grid, p_hat, s_hat, n)


def trajectory_betas(ensemble: PredictiveEnsemble, traj: Trajectory, include_initial: bool = True):
    """(Q_obs, beta) matrices for one trajectory, optionally without the disturbance visit."""
    q = observed_quantile(ensemble, traj)
    beta = smallest_cri(q)
    if not include_initial:
        q, beta = q[1:], beta[1:]
    return q, beta
