"""Gaussian observation model, uniform priors and the sampling-space target."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .growth import (
    GroupParams,
    GrowthDomainError,
    GrowthParams,
    InitialState,
    SolutionGrid,
    SolverError,
    richards_cover,
    solve,
)

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-4  # (% cover)^2
C0_FLOOR = 0.01  # % cover; a zero initial cover would pin the model at zero
LOG_2PI = np.log(2.0 * np.pi)

# model groups for the one- and two-group models
MODEL_GROUPS = {1: ("hard-coral",), 2: ("Acroporidae", "other-hard-coral")}
GROUP_SUFFIX = {"Acroporidae": "_A", "other-hard-coral": "_C", "hard-coral": ""}


@dataclass(frozen=True)
class Trajectory:
    """One recovery trajectory: the disturbance visit at ``times[0]`` and the visits after it.

    ``obs`` and ``stderr_var`` are (time, group) arrays; ``stderr_var`` holds the
    variance of the transect mean, s^2 / n_transects, floored at ``VARIANCE_FLOOR``.
    """

    id: str
    times: np.ndarray
    obs: np.ndarray
    stderr_var: np.ndarray
    K: float
    groups: tuple[str, ...] = ("hard-coral",)
    reef: str = ""
    site: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        obs = np.asarray(self.obs, dtype=float)
        var = np.asarray(self.stderr_var, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if var.ndim == 1:
            var = var[:, None]
        if times.ndim != 1 or obs.shape != (times.size, len(self.groups)) or var.shape != obs.shape:
            raise ValueError(
                f"trajectory {self.id}: shapes times {times.shape}, obs {obs.shape}, "
                f"var {var.shape} do not match {len(self.groups)} groups"
            )
        if times.size < 3:
            raise ValueError(f"trajectory {self.id}: need at least 2 visits after t0")
        if np.any(np.diff(times) <= 0):
            raise ValueError(f"trajectory {self.id}: times must be strictly increasing")
        if np.any(obs < 0) or np.any(obs > 100) or not np.all(np.isfinite(obs)):
            raise ValueError(f"trajectory {self.id}: covers must lie in [0, 100]")
        if np.any(np.isnan(var)) or np.any(var < 0):
            raise ValueError(f"trajectory {self.id}: variances must be >= 0")
        if not (0 < self.K <= 100):
            raise ValueError(f"trajectory {self.id}: K must be in (0, 100]")
        var = np.maximum(var, VARIANCE_FLOOR)
        for name, arr in (("times", times), ("obs", obs), ("stderr_var", var)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "groups", tuple(self.groups))

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def n(self) -> int:
        """Number of visits after the disturbance visit."""
        return self.times.size - 1

    @property
    def D(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def M(self) -> int:
        return len(self.groups)

    def initial_state(self) -> InitialState:
        """The disturbance-visit cover, taken as the known initial condition."""
        return InitialState(self.t0, np.maximum(self.obs[0], C0_FLOOR))

    def select(self, groups: Sequence[str]) -> "Trajectory":
        idx = [self.groups.index(g) for g in groups]
        return Trajectory(
            self.id, self.times, self.obs[:, idx], self.stderr_var[:, idx], self.K,
            tuple(groups), self.reef, self.site, dict(self.meta),
        )

    def for_model(self, M: int) -> "Trajectory":
        groups = MODEL_GROUPS[M]
        if self.groups == groups:
            return self
        return self.select(groups)


@dataclass(frozen=True)
class PriorSpec:
    """Independent uniform priors, identical for every group."""

    alpha: tuple[float, float] = (0.0, 1.0)
    gamma: tuple[float, float] = (0.0, 2.0)
    T_d: tuple[float, float] = (0.0, 1.0)
    alpha_d: tuple[float, float] = (0.0, 0.9)

    def __post_init__(self):
        for name in ("alpha", "gamma", "T_d", "alpha_d"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"prior bounds for {name} must be finite and ordered")

    @classmethod
    def for_trajectory(cls, traj: Trajectory, **bounds) -> "PriorSpec":
        return cls(T_d=(0.0, traj.D), **bounds)

    def bounds(self, M: int) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper bounds of the 4*M free parameters."""
        lo = np.tile([self.alpha[0], self.gamma[0], self.T_d[0], self.alpha_d[0]], M)
        hi = np.tile([self.alpha[1], self.gamma[1], self.T_d[1], self.alpha_d[1]], M)
        return lo.astype(float), hi.astype(float)

    def sample(self, M: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.bounds(M)
        return rng.uniform(lo, hi)


def free_parameters(params: GrowthParams) -> np.ndarray:
    return params.as_vector()[:-1]


def parameter_names(M: int) -> list[str]:
    names = []
    for group in MODEL_GROUPS[M]:
        suffix = GROUP_SUFFIX[group]
        names += [f"alpha{suffix}", f"gamma{suffix}", f"T_d{suffix}", f"alpha_d{suffix}"]
    return names


def params_from_free(theta: np.ndarray, K: float) -> GrowthParams:
    return GrowthParams.from_vector(np.append(theta, K))


def transform(z, prior: PriorSpec, K: float) -> GrowthParams:
    """Map an unconstrained vector onto the prior box (scaled logistic per coordinate)."""
    return params_from_free(theta_from_z(z, prior), K)


def theta_from_z(z, prior: PriorSpec) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.size % 4 or not np.all(np.isfinite(z)):
        raise ValueError("z must be a finite vector of length 4*M")
    lo, hi = prior.bounds(z.size // 4)
    return lo + (hi - lo) * expit(z)


def inverse_transform(params: GrowthParams, prior: PriorSpec) -> np.ndarray:
    return z_from_theta(free_parameters(params), prior)


def z_from_theta(theta, prior: PriorSpec) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    lo, hi = prior.bounds(theta.size // 4)
    if np.any(theta <= lo) or np.any(theta >= hi):
        raise ValueError("parameters on or outside the prior boundary have no finite preimage")
    u = (theta - lo) / (hi - lo)
    return np.log(u) - np.log1p(-u)


def log_jacobian(z, prior: PriorSpec) -> float:
    """log |d theta / d z| of the scaled-logistic map."""
    z = np.asarray(z, dtype=float)
    lo, hi = prior.bounds(z.size // 4)
    # log sigma(z) + log(1 - sigma(z)) = -softplus(-z) - softplus(z)
    return float(np.sum(np.log(hi - lo) - np.logaddexp(0.0, -z) - np.logaddexp(0.0, z)))


def log_likelihood(params: GrowthParams, traj: Trajectory, solution: SolutionGrid) -> float:
    """Independent Gaussian log-density of every observation (all visits, all groups)."""
    cover = np.asarray(solution.cover, dtype=float)
    if cover.shape != traj.obs.shape:
        raise ValueError(f"solution shape {cover.shape} does not match data {traj.obs.shape}")
    if params.M != traj.M:
        raise ValueError(f"{params.M}-group parameters for a {traj.M}-group trajectory")
    if not np.all(np.isfinite(cover)):
        raise ValueError("solution contains non-finite values")
    resid = traj.obs - cover
    var = traj.stderr_var
    return float(-0.5 * np.sum(LOG_2PI + np.log(var) + resid * resid / var))


def log_prior(params: GrowthParams, prior: PriorSpec) -> float:
    """Sum of uniform log-densities; ``-inf`` outside the support. K is fixed, not inferred."""
    theta = free_parameters(params)
    lo, hi = prior.bounds(params.M)
    if np.any(theta < lo) or np.any(theta > hi):
        return -np.inf
    return float(-np.sum(np.log(hi - lo)))


class Posterior:
    """Unnormalised log-posterior over the unconstrained vector z for one trajectory.

    Solver failures and domain errors give ``-inf`` and are counted in ``failures``.
    """

    def __init__(self, traj: Trajectory, prior: PriorSpec | None = None, **solver_kw):
        self.traj = traj
        self.prior = prior or PriorSpec.for_trajectory(traj)
        self.solver_kw = solver_kw
        self.init = traj.initial_state()
        self.init.validate_against(GrowthParams((GroupParams(0.5, 1.0, 0.0, 0.5),) * traj.M, traj.K))
        self.dim = 4 * traj.M
        self.failures = 0
        self._lo, self._hi = self.prior.bounds(traj.M)
        self._log_prior = -float(np.sum(np.log(self._hi - self._lo)))
        self._tau = traj.times - traj.t0
        self._ll_const = -0.5 * float(np.sum(LOG_2PI + np.log(traj.stderr_var)))
        self._inv_var = 1.0 / traj.stderr_var[:, 0]

    def __call__(self, z) -> float:
        z = np.asarray(z, dtype=float)
        theta = self._lo + (self._hi - self._lo) * expit(z)
        if self.traj.M == 1:
            return self._single_group(z, theta)
        try:
            params = params_from_free(theta, self.traj.K)
            sol = solve(params, self.init, self.traj.times, **self.solver_kw)
            ll = log_likelihood(params, self.traj, sol)
        except (SolverError, GrowthDomainError, ValueError) as exc:
            self.failures += 1
            log.debug("posterior evaluation failed at theta=%s: %s", theta, exc)
            return -np.inf
        lp = log_prior(params, self.prior)
        return ll + lp + log_jacobian(z, self.prior)

    def _single_group(self, z, theta) -> float:
        # same result as the general path, without building intermediate objects
        alpha, gamma, T_d, alpha_d = theta
        if not (alpha > 0 and gamma > 0 and T_d >= 0 and 0 < alpha_d <= 1):
            self.failures += 1
            return -np.inf
        cover = richards_cover(alpha, gamma, T_d, alpha_d, self.traj.K, self.init.c0[0], self._tau)
        resid = self.traj.obs[:, 0] - cover
        ll = self._ll_const - 0.5 * float(resid * resid @ self._inv_var)
        if not np.isfinite(ll):
            self.failures += 1
            return -np.inf
        jac = float(np.sum(np.log(self._hi - self._lo) - np.logaddexp(0.0, -z) - np.logaddexp(0.0, z)))
        return ll + self._log_prior + jac

    def to_theta(self, z) -> np.ndarray:
        """Parameter vectors for z (a vector or rows of vectors)."""
        return self._lo + (self._hi - self._lo) * expit(np.asarray(z, dtype=float))

    def sample_z(self, rng: np.random.Generator) -> np.ndarray:
        """An over-dispersed start: a prior draw mapped to z-space."""
        while True:
            theta = self.prior.sample(self.traj.M, rng)
            if np.all(theta > self._lo) and np.all(theta < self._hi):
                return z_from_theta(theta, self.prior)


def log_posterior_unnorm(z, traj: Trajectory, prior: PriorSpec | None = None, **solver_kw) -> float:
    return Posterior(traj, prior, **solver_kw)(z)
