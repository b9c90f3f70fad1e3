"""Robust adaptive random-walk Metropolis (Vihola 2012) and multi-chain fitting.

The proposal is ``z' = z + S u`` with ``u ~ N(0, I)``.  After each step the
lower-triangular factor S is updated so that

    S' S'^T = S (I + eta_n (a - a*) u u^T / |u|^2) S^T,   eta_n = min(1, d n^(-2/3)),

driving the acceptance probability a towards a* = 0.234.
"""
from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from numba import njit

from .diagnostics import ESS_THRESHOLD, RHAT_THRESHOLD, ConvergenceReport, diagnose
from .likelihood import Posterior, PriorSpec, Trajectory, parameter_names

log = logging.getLogger(__name__)

TARGET_ACCEPT = 0.234
ADAPT_EXPONENT = 2.0 / 3.0
INITIAL_SCALE = 0.1


class InitializationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RamState:
    z: np.ndarray
    log_post: float
    S: np.ndarray
    iter: int = 0
    accept_count: int = 0
    refactorizations: int = 0


@njit(cache=True)
def _chol_rank1(L, v, sign):
    d = v.size
    for k in range(d):
        lkk = L[k, k]
        r2 = lkk * lkk + sign * v[k] * v[k]
        if not r2 > 0.0:
            return False
        r = np.sqrt(r2)
        c = r / lkk
        s = v[k] / lkk
        L[k, k] = r
        for i in range(k + 1, d):
            L[i, k] = (L[i, k] + sign * s * v[i]) / c
            v[i] = c * v[i] - s * L[i, k]
    return True


def chol_rank1_update(L: np.ndarray, v: np.ndarray, sign: float = 1.0) -> np.ndarray | None:
    """Cholesky factor of ``L L^T + sign * v v^T``; None if it is not positive definite."""
    L = np.array(L, dtype=float)
    if not _chol_rank1(L, np.array(v, dtype=float), float(sign)):
        return None
    return L


def _refactor(S: np.ndarray, u: np.ndarray, coef: float) -> np.ndarray:
    d = u.size
    cov = S @ (np.eye(d) + coef * np.outer(u, u)) @ S.T
    cov = 0.5 * (cov + cov.T)
    jitter = 1e-12 * max(np.trace(cov) / d, 1e-300)
    for _ in range(30):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(d))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    return S


def ram_step(
    state: RamState,
    target: Callable[[np.ndarray], float],
    rng: np.random.Generator,
    adapt: bool = True,
    target_accept: float = TARGET_ACCEPT,
) -> RamState:
    d = state.z.size
    u = rng.standard_normal(d)
    z_prop = state.z + state.S @ u
    lp_prop = target(z_prop)
    if lp_prop >= state.log_post:
        accept_prob = 1.0
    elif np.isfinite(lp_prop):
        accept_prob = math.exp(lp_prop - state.log_post)
    else:
        accept_prob = 0.0
    accepted = rng.random() < accept_prob

    n = state.iter + 1
    S = state.S
    refactorizations = state.refactorizations
    if adapt:
        eta = min(1.0, d * n ** -ADAPT_EXPONENT)
        uu = float(u @ u)
        coef = eta * (accept_prob - target_accept) / uu
        if coef != 0.0:
            v = math.sqrt(abs(coef)) * (S @ u)
            S_new = chol_rank1_update(S, v, 1.0 if coef > 0 else -1.0)
            if S_new is None:
                S_new = _refactor(S, u, coef)
                refactorizations += 1
            S = S_new
    if accepted:
        return RamState(z_prop, lp_prop, S, n, state.accept_count + 1, refactorizations)
    return RamState(state.z, state.log_post, S, n, state.accept_count, refactorizations)


@dataclass
class ChainRun:
    """Kept draws of one chain (every ``thin``-th iteration)."""

    draws: np.ndarray  # theta space, (kept, d)
    z_draws: np.ndarray
    log_post_trace: np.ndarray
    acceptance_rate: float
    seed: object
    thin: int
    n_iter: int
    refactorizations: int = 0

    def post_burnin(self) -> np.ndarray:
        return self.draws[self.draws.shape[0] // 2 :]


class RamChain:
    """A resumable RAM chain; ``advance`` continues the same random stream."""

    def __init__(
        self,
        target,
        init,
        seed,
        thin: int = 1,
        to_theta: Callable | None = None,
        init_sampler: Callable | None = None,
        max_init_retries: int = 100,
        adapt: bool = True,
        initial_scale: float | np.ndarray = INITIAL_SCALE,
        target_accept: float = TARGET_ACCEPT,
    ):
        if thin < 1:
            raise ValueError("thin must be a positive integer")
        self.target = target
        self.seed = seed
        self.thin = int(thin)
        # to_theta maps an array of z rows to parameter rows
        self.to_theta = to_theta or (lambda z: np.array(z, dtype=float))
        self.adapt = adapt
        self.target_accept = target_accept
        self.rng = make_rng(seed)

        z = np.array(init, dtype=float)
        lp = target(z)
        retries = 0
        while not np.isfinite(lp):
            if init_sampler is None or retries >= max_init_retries:
                raise InitializationError(
                    f"no finite log-posterior at the initial point after {retries} retries"
                )
            z = np.asarray(init_sampler(self.rng), dtype=float)
            lp = target(z)
            retries += 1
        d = z.size
        scale = np.broadcast_to(np.asarray(initial_scale, dtype=float), (d,))
        self.state = RamState(z, float(lp), np.diag(scale).astype(float))
        self._z, self._theta, self._lp = [], [], []

    def advance(self, n_iter: int) -> None:
        state = self.state
        for _ in range(n_iter):
            state = ram_step(state, self.target, self.rng, self.adapt, self.target_accept)
            if state.iter % self.thin == 0:
                self._z.append(state.z)
                self._lp.append(state.log_post)
        self.state = state

    def result(self) -> ChainRun:
        d = self.state.z.size
        z = np.array(self._z).reshape(-1, d)
        theta = np.asarray(self.to_theta(z), dtype=float).reshape(-1, d)
        rate = self.state.accept_count / self.state.iter if self.state.iter else 0.0
        return ChainRun(
            theta, z, np.array(self._lp), rate, self.seed, self.thin, self.state.iter,
            self.state.refactorizations,
        )


def make_rng(seed) -> np.random.Generator:
    """Counter-based Philox stream; ``seed`` may be an int or a SeedSequence."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def run_chain(target, init, n_iter: int, seed, thin: int = 1, **chain_kw) -> ChainRun:
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    chain = RamChain(target, init, seed, thin, **chain_kw)
    chain.advance(n_iter)
    return chain.result()


@dataclass(frozen=True)
class FitConfig:
    model: int = 1
    n_chains: int = 4
    round_length: int = 20_000
    max_iters: int = 200_000
    seed: int = 0
    thin: int = 1
    max_stored_values: int = 8_000_000
    init_candidates: int = 100
    rhat_threshold: float = RHAT_THRESHOLD
    ess_threshold: float = ESS_THRESHOLD
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    prior_alpha: tuple[float, float] = (0.0, 1.0)
    prior_gamma: tuple[float, float] = (0.0, 2.0)
    prior_alpha_d: tuple[float, float] = (0.0, 0.9)

    def validate(self) -> None:
        if self.model not in (1, 2):
            raise ValueError(f"model must be 1 or 2, got {self.model}")
        for name in ("n_chains", "round_length", "max_iters", "thin", "max_stored_values",
                     "init_candidates"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.n_chains < 2:
            raise ValueError("convergence diagnostics need at least 2 chains")
        if self.rhat_threshold <= 1 or self.ess_threshold <= 0:
            raise ValueError("thresholds must be r_hat > 1 and ess > 0")
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("solver tolerances must be positive")

    def prior_for(self, traj: Trajectory) -> PriorSpec:
        return PriorSpec.for_trajectory(
            traj, alpha=self.prior_alpha, gamma=self.prior_gamma, alpha_d=self.prior_alpha_d
        )

    def effective_thin(self, dim: int) -> int:
        projected = self.n_chains * self.max_iters * (dim + 1) / self.thin
        return self.thin * max(1, math.ceil(projected / self.max_stored_values))


@dataclass
class FitResult:
    traj_id: str
    names: list[str]
    chains: list[ChainRun]
    report: ConvergenceReport
    iterations: int
    thin: int
    solver_failures: int
    config: FitConfig = field(repr=False)

    @property
    def converged(self) -> bool:
        return self.report.passed

    def pooled_draws(self) -> np.ndarray:
        return np.concatenate([c.post_burnin() for c in self.chains], axis=0)


def chain_seed(seed: int, traj_id: str, chain: int) -> np.random.SeedSequence:
    """Independent stream per (run seed, trajectory, chain)."""
    return np.random.SeedSequence(seed, spawn_key=(zlib.crc32(traj_id.encode()), chain))


def best_of_prior(target: Posterior, rng: np.random.Generator, n: int) -> np.ndarray:
    """Highest-density point among ``n`` independent prior draws (in z-space).

    Each chain draws its own candidates, so starts stay dispersed over the prior
    while avoiding isolated low-density basins a random walk cannot leave.
    """
    best, best_lp = None, -np.inf
    for _ in range(n):
        z = target.sample_z(rng)
        lp = target(z)
        if best is None or lp > best_lp:
            best, best_lp = z, lp
    return best


def run_fit(traj: Trajectory, config: FitConfig = FitConfig()) -> FitResult:
    """Fit one trajectory with independent RAM chains, checking convergence every round.

    Stops at the first round whose post-burn-in draws pass the R-hat/ESS gate, or
    at ``max_iters`` iterations per chain; a non-converged result is still returned.
    """
    config.validate()
    traj = traj.for_model(config.model)
    target = Posterior(traj, config.prior_for(traj), rel_tol=config.rel_tol, abs_tol=config.abs_tol)
    names = parameter_names(config.model)
    thin = config.effective_thin(target.dim)

    chains = []
    for c in range(config.n_chains):
        ss = chain_seed(config.seed, traj.id, c)
        init_rng = make_rng(ss.spawn(1)[0])
        chains.append(
            RamChain(
                target, best_of_prior(target, init_rng, config.init_candidates), ss, thin,
                to_theta=target.to_theta,
                init_sampler=target.sample_z,
            )
        )

    iters = 0
    report = None
    while iters < config.max_iters:
        step = min(config.round_length, config.max_iters - iters)
        for ch in chains:
            ch.advance(step)
        iters += step
        kept = [ch.result().post_burnin() for ch in chains]
        if min(k.shape[0] for k in kept) < 10:
            continue
        report = diagnose(
            kept, names, rhat_threshold=config.rhat_threshold,
            ess_threshold=config.ess_threshold, iterations_used=iters,
        )
        log.info("%s: %d iterations, pass=%s %s", traj.id, iters, report.passed, report.reasons)
        if report.passed:
            break
    runs = [ch.result() for ch in chains]
    if report is None:
        report = diagnose(
            [r.post_burnin() for r in runs], names, rhat_threshold=config.rhat_threshold,
            ess_threshold=config.ess_threshold, iterations_used=iters,
        )
    return FitResult(traj.id, names, runs, report, iters, thin, target.failures, config)
