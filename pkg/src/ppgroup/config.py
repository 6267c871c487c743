"""Pipeline configuration: one JSON document, every section optional.

Example (all values shown are the defaults)::

    {
      "grid": {"nx": 47, "ny": 50, "x_min": 0, "x_max": 47, "y_min": 0, "y_max": 50},
      "covariance": {"kernel": "matern32", "sigma2": 1.0, "rho": 6.0, "mean": null},
      "fit": {"tol": 1e-6, "max_iter": 100, "min_attempts": 0},
      "similarity": {"clamp": 1e-10},
      "priors": {"gamma": 1.0, "alpha": 1.0, "beta": 1.0, "mu0": null, "k0": 1.0, "k_rate": 1.0},
      "mcmc": {"iters": 1000, "burnin": 500, "seed": 0},
      "study": {"replicates": 10, "players_per_group": 25, "noise_variance": 0.5,
                "expected_points": 500.0, "kmeans_restarts": 1, "seed": 2020},
      "seed_stability": {"chains": 5},
      "workers": 1
    }

``mean: null`` uses ``log(max(T, 1) / area)`` per pattern and ``mu0: null``
uses the mean off-diagonal transformed similarity.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .court import Domain, GridSpec, InputError
from .intensity import CovarianceSpec
from .mfm import MfmPriors

FAST_GRID = GridSpec(Domain(), 24, 25)


@dataclass(frozen=True)
class FitSettings:
    tol: float = 1e-6
    max_iter: int = 100
    min_attempts: int = 0


@dataclass(frozen=True)
class McmcSettings:
    iters: int = 1000
    burnin: int = 500
    seed: int = 0

    def __post_init__(self):
        if not self.iters > self.burnin >= 0:
            raise ValueError("mcmc needs iters > burnin >= 0")


@dataclass(frozen=True)
class SimConfig:
    replicates: int = 10
    players_per_group: int = 25
    noise_variance: float = 0.5
    expected_points: float = 500.0
    # Single start, like the common default; more restarts make the baseline near-perfect here.
    kmeans_restarts: int = 1
    seed: int = 2020

    def __post_init__(self):
        if self.players_per_group < 1 or self.noise_variance < 0 or self.expected_points <= 0:
            raise ValueError("invalid simulation settings")


@dataclass(frozen=True)
class PipelineConfig:
    grid: GridSpec = GridSpec()
    covariance: CovarianceSpec = CovarianceSpec()
    fit: FitSettings = FitSettings()
    clamp: float = 1e-10
    priors: MfmPriors = MfmPriors()
    mcmc: McmcSettings = McmcSettings()
    study: SimConfig = SimConfig()
    chains: int = 5
    workers: int = 1

    def with_seed(self, seed: int | None) -> "PipelineConfig":
        if seed is None:
            return self
        return dataclasses.replace(self, mcmc=dataclasses.replace(self.mcmc, seed=seed))

    def fast(self) -> "PipelineConfig":
        return dataclasses.replace(self, grid=FAST_GRID)

    def to_dict(self) -> dict:
        d = self.grid.domain
        pri = self.priors
        return {
            "grid": {"nx": self.grid.nx, "ny": self.grid.ny, "x_min": d.x_min,
                     "x_max": d.x_max, "y_min": d.y_min, "y_max": d.y_max},
            "covariance": dataclasses.asdict(self.covariance),
            "fit": dataclasses.asdict(self.fit),
            "similarity": {"clamp": self.clamp},
            "priors": {"gamma": pri.gamma, "alpha": pri.alpha, "beta": pri.beta,
                       "mu0": pri.mu0, "k0": pri.k0, "k_rate": pri.k_rate},
            "mcmc": dataclasses.asdict(self.mcmc),
            "study": dataclasses.asdict(self.study),
            "seed_stability": {"chains": self.chains},
            "workers": self.workers,
        }


_SECTIONS = {"grid", "covariance", "fit", "similarity", "priors", "mcmc", "study",
             "seed_stability", "workers"}


def _section(raw: dict, name: str, allowed: set[str]) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise InputError(f"config section {name!r} must be an object")
    unknown = set(sec) - allowed
    if unknown:
        raise InputError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return sec


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def config_from_dict(raw: dict) -> PipelineConfig:
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise InputError(f"unknown config sections: {sorted(unknown)}")
    try:
        g = _section(raw, "grid", {"nx", "ny", "x_min", "x_max", "y_min", "y_max"})
        dom = dataclasses.replace(Domain(), **{k: float(v) for k, v in g.items() if k != "nx" and k != "ny"})
        grid = GridSpec(dom, int(g.get("nx", 47)), int(g.get("ny", 50)))
        cov = CovarianceSpec(**_section(raw, "covariance", _fields(CovarianceSpec)))
        fit = FitSettings(**_section(raw, "fit", _fields(FitSettings)))
        clamp = float(_section(raw, "similarity", {"clamp"}).get("clamp", 1e-10))
        priors = MfmPriors(**_section(raw, "priors", {"gamma", "alpha", "beta", "mu0", "k0", "k_rate"}))
        mcmc = McmcSettings(**_section(raw, "mcmc", _fields(McmcSettings)))
        study = SimConfig(**_section(raw, "study", _fields(SimConfig)))
        chains = int(_section(raw, "seed_stability", {"chains"}).get("chains", 5))
        workers = int(raw.get("workers", 1))
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid config: {exc}") from None
    if not 0 < clamp < 1e-3:
        raise InputError("similarity.clamp must lie in (0, 1e-3)")
    return PipelineConfig(grid, cov, fit, clamp, priors, mcmc, study, chains, max(workers, 1))


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot load config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise InputError("config must be a JSON object")
    return config_from_dict(raw)
