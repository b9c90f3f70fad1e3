"""Biphasic Richards' growth dynamics for one or more coral groups.

Each group m grows as

    dC_m/dt = s_m(t) * alpha_m / gamma_m * C_m * [1 - (sum_k C_k / K) ** gamma_m]

where ``s_m(t) = alpha_d_m`` during the slow phase ``t0 < t <= t0 + T_d_m`` and
``1`` afterwards.  A single group has a closed-form solution; coupled groups
are integrated with an adaptive Runge-Kutta-Fehlberg 4(5) scheme (``ode.py``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ode

# |sum(c) - K| below this is treated as roundoff at capacity
CAPACITY_ROUNDOFF = 1e-12

GROUP_FIELDS = ("alpha", "gamma", "T_d", "alpha_d")


class GrowthDomainError(ValueError):
    """Parameters or state outside the model's domain."""


class SolverError(RuntimeError):
    """Numerical integration failed."""


class StiffnessError(SolverError):
    pass


class NonFiniteStateError(SolverError):
    pass


@dataclass(frozen=True)
class GroupParams:
    alpha: float
    gamma: float
    T_d: float
    alpha_d: float

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise GrowthDomainError(f"alpha must be > 0, got {self.alpha}")
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise GrowthDomainError(f"gamma must be > 0, got {self.gamma}")
        if not (np.isfinite(self.T_d) and self.T_d >= 0):
            raise GrowthDomainError(f"T_d must be >= 0, got {self.T_d}")
        if not (0 < self.alpha_d <= 1):
            raise GrowthDomainError(f"alpha_d must be in (0, 1], got {self.alpha_d}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.alpha, self.gamma, self.T_d, self.alpha_d)


@dataclass(frozen=True)
class GrowthParams:
    """Per-group growth parameters plus the shared carrying capacity K (% area)."""

    groups: tuple[GroupParams, ...]
    K: float

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        if len(self.groups) < 1:
            raise GrowthDomainError("at least one group is required")
        if not (0 < self.K <= 100):
            raise GrowthDomainError(f"K must be in (0, 100], got {self.K}")

    @property
    def M(self) -> int:
        return len(self.groups)

    def as_vector(self) -> np.ndarray:
        """Flat vector [alpha_1, gamma_1, T_d1, alpha_d1, ..., K]."""
        flat = [v for g in self.groups for v in g.as_tuple()]
        return np.array(flat + [self.K], dtype=float)

    @classmethod
    def from_vector(cls, vec: Sequence[float]) -> "GrowthParams":
        vec = np.asarray(vec, dtype=float)
        if vec.size < 5 or (vec.size - 1) % 4:
            raise GrowthDomainError(f"vector length {vec.size} is not 4*M + 1")
        groups = [GroupParams(*map(float, vec[i : i + 4])) for i in range(0, vec.size - 1, 4)]
        return cls(tuple(groups), float(vec[-1]))

    def _arrays(self):
        a = np.array([[g.alpha, g.gamma, g.T_d, g.alpha_d] for g in self.groups]).T
        return a[0], a[1], a[2], a[3]


@dataclass(frozen=True)
class InitialState:
    t0: float
    c0: np.ndarray

    def __post_init__(self):
        c0 = np.atleast_1d(np.asarray(self.c0, dtype=float)).copy()
        c0.setflags(write=False)
        object.__setattr__(self, "c0", c0)
        if not np.all(c0 > 0):
            raise GrowthDomainError(f"initial covers must be > 0, got {c0}")

    def validate_against(self, params: GrowthParams) -> None:
        if self.c0.size != params.M:
            raise GrowthDomainError(f"{self.c0.size} initial covers for {params.M} groups")
        if self.c0.sum() > params.K + CAPACITY_ROUNDOFF:
            raise GrowthDomainError(
                f"initial total cover {self.c0.sum():.6g} exceeds K = {params.K:.6g}"
            )


@dataclass(frozen=True)
class SolutionGrid:
    times: np.ndarray
    cover: np.ndarray  # (time, group)
    params: GrowthParams | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in ("times", "cover"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def total(self) -> np.ndarray:
        return self.cover.sum(axis=1)


def _check_times(times, t0) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.ndim != 1 or times.size == 0:
        raise GrowthDomainError("times must be a non-empty 1-D array")
    if np.any(np.diff(times) <= 0):
        raise GrowthDomainError("times must be strictly increasing")
    if times[0] < t0:
        raise GrowthDomainError(f"times must be >= t0 = {t0}")
    return times


def rhs(t: float, c, params: GrowthParams, t0: float = 0.0, slow=None) -> np.ndarray:
    """Growth rate of each group (% cover per year).

    ``slow`` overrides the phase flags; by default group m is in its slow phase
    iff ``t <= t0 + T_d_m``.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if params.K <= 0:
        raise GrowthDomainError("K must be > 0")
    if c.size != params.M:
        raise GrowthDomainError(f"{c.size} covers for {params.M} groups")
    if np.any(c <= 0):
        raise GrowthDomainError(f"covers must be > 0, got {c}")
    alpha, gamma, T_d, alpha_d = params._arrays()
    if slow is None:
        slow = t <= t0 + T_d
    scale = np.where(np.asarray(slow, dtype=bool), alpha_d, 1.0)
    total = c.sum()
    bracket = 1.0 - (total / params.K) ** gamma
    if abs(total - params.K) <= CAPACITY_ROUNDOFF:
        bracket = np.maximum(bracket, 0.0)
    return scale * alpha / gamma * c * bracket


def richards_cover(alpha, gamma, T_d, alpha_d, K, c0, tau):
    """Closed-form single-group cover at elapsed times ``tau = t - t0`` (vectorised).

    Works in log space: with A = (K/c0)^gamma - 1 and the phase-weighted elapsed
    growth R = alpha * (alpha_d * min(tau, T_d) + max(tau - T_d, 0)),
    C = K * exp(-log1p(A * exp(-R)) / gamma).  The second phase restarts from
    C_d = C(t0 + T_d), whose (K/C_d)^gamma - 1 equals A * exp(-alpha_d*alpha*T_d),
    so the two branches agree at the change point.
    """
    tau = np.asarray(tau, dtype=float)
    g = gamma * np.log(K / c0)
    with np.errstate(divide="ignore"):
        log_a = g + np.log(-np.expm1(-g))  # log((K/c0)^gamma - 1), -inf when c0 == K
    growth = alpha * (alpha_d * np.minimum(tau, T_d) + np.maximum(tau - T_d, 0.0))
    return K * np.exp(-np.logaddexp(0.0, log_a - growth) / gamma)


def solve_analytic(params: GrowthParams, init: InitialState, times) -> SolutionGrid:
    """Exact solution of the single-group biphasic model on ``times``."""
    if params.M != 1:
        raise GrowthDomainError("the closed form exists only for a single group")
    init.validate_against(params)
    times = _check_times(times, init.t0)
    g = params.groups[0]
    cover = richards_cover(
        g.alpha, g.gamma, g.T_d, g.alpha_d, params.K, init.c0[0], times - init.t0
    )
    return SolutionGrid(times, cover[:, None], params)


def change_points(params: GrowthParams, t0: float) -> np.ndarray:
    """Sorted, de-duplicated absolute change times t0 + T_d_m."""
    return np.unique([t0 + g.T_d for g in params.groups])


def integrate(
    params: GrowthParams,
    init: InitialState,
    times,
    rel_tol: float = 1e-8,
    abs_tol: float = 1e-10,
    *,
    h0: float = 1e-3,
    h_min: float = 1e-12,
    h_max: float = 1.0,
    safety: float = 0.9,
) -> SolutionGrid:
    """Adaptive RKF4(5) solution, restarted at every change point.

    Accepted steps are forced to land on every requested output time and on
    every change point, so no step straddles a rate discontinuity.
    """
    if rel_tol <= 0 or abs_tol <= 0:
        raise ValueError("tolerances must be positive")
    init.validate_against(params)
    times = _check_times(times, init.t0)
    alpha, gamma, T_d, alpha_d = params._arrays()
    cover, status, t_fail = ode.rkf45_biphasic(
        alpha, gamma, alpha_d, init.t0 + T_d, float(params.K),
        np.array(init.c0, dtype=float), float(init.t0), times,
        rel_tol, abs_tol, h0, h_min, h_max, safety,
    )
    if status == ode.STEP_UNDERFLOW:
        raise StiffnessError(f"step size fell below {h_min:g} at t = {t_fail:.6g}")
    if status == ode.NON_FINITE:
        raise NonFiniteStateError(f"non-finite state at t = {t_fail:.6g} for {params}")
    return SolutionGrid(times, cover, params)


def solve(params: GrowthParams, init: InitialState, times, **solver_kw) -> SolutionGrid:
    """Closed form for one group, RKF45 otherwise."""
    if params.M == 1:
        return solve_analytic(params, init, times)
    return integrate(params, init, times, **solver_kw)
