"""Run configuration shared by every CLI command.

A config file is a flat JSON object whose keys are the field names below
(flag spellings with dashes are accepted too).  Explicit command-line flags
override the file, which overrides the defaults.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

from .diagnostics import ESS_THRESHOLD, RHAT_THRESHOLD
from .predictive import LEVELS
from .sampler import FitConfig

# settings that change nothing about the outputs, so they stay out of the hash
_UNHASHED = ("jobs", "taxonomy", "site_metadata")


@dataclass(frozen=True)
class RunConfig:
    model: int = 1
    seed: int = 0
    jobs: int = 1
    chains: int = 4
    max_iters: int = 200_000
    round_length: int = 20_000
    thin: int = 1
    max_stored_values: int = 8_000_000
    init_candidates: int = 100
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    prior_alpha: tuple[float, float] = (0.0, 1.0)
    prior_gamma: tuple[float, float] = (0.0, 2.0)
    prior_alpha_d: tuple[float, float] = (0.0, 0.9)
    rhat_threshold: float = RHAT_THRESHOLD
    ess_threshold: float = ESS_THRESHOLD
    p_threshold: float = 0.05
    min_post_visits: int = 3
    silt_threshold: float = 0.0
    n_predictive: int = 1000
    levels: tuple[int, ...] = LEVELS
    coverage_include_initial: bool = False
    taxonomy: str | None = None
    site_metadata: str | None = None

    def __post_init__(self):
        for name in ("prior_alpha", "prior_gamma", "prior_alpha_d", "levels"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def validate(self) -> "RunConfig":
        if self.model not in (1, 2):
            raise ValueError(f"model must be 1 or 2, got {self.model}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        for name in ("jobs", "chains", "max_iters", "round_length", "thin", "max_stored_values",
                     "init_candidates", "min_post_visits", "n_predictive"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.min_post_visits < 2:
            raise ValueError("min_post_visits must be at least 2")
        if self.chains < 2:
            raise ValueError("at least 2 chains are needed for R-hat")
        for name in ("rel_tol", "abs_tol", "ess_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.rhat_threshold > 1:
            raise ValueError("rhat_threshold must exceed 1")
        if not 0 < self.p_threshold < 1:
            raise ValueError("p_threshold must lie in (0, 1)")
        if self.silt_threshold < 0:
            raise ValueError("silt_threshold must be non-negative")
        for name in ("prior_alpha", "prior_gamma", "prior_alpha_d"):
            lo, hi = getattr(self, name)
            if not 0 <= lo < hi:
                raise ValueError(f"{name} must be an ordered pair of non-negative bounds")
        if not self.levels or any(not 0 < lv < 100 for lv in self.levels):
            raise ValueError("credible levels must lie strictly between 0 and 100")
        return self

    def fit_config(self) -> FitConfig:
        return FitConfig(
            model=self.model, n_chains=self.chains, round_length=self.round_length,
            max_iters=self.max_iters, seed=self.seed, thin=self.thin,
            max_stored_values=self.max_stored_values,
            init_candidates=self.init_candidates, rhat_threshold=self.rhat_threshold,
            ess_threshold=self.ess_threshold, rel_tol=self.rel_tol, abs_tol=self.abs_tol,
            prior_alpha=self.prior_alpha, prior_gamma=self.prior_gamma,
            prior_alpha_d=self.prior_alpha_d,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def hash(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def header(self) -> str:
        return f"config_hash={self.hash()} seed={self.seed}"

    def updated(self, **overrides) -> "RunConfig":
        known = {f.name for f in fields(self)}
        clean = {}
        for key, value in overrides.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            if value is not None:
                clean[key] = value
        return replace(self, **clean)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        return cls().updated(**data)
