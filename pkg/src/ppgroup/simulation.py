"""Synthetic three-group shot-chart study.

Players in a group share a base surface plus an independent half-normal
perturbation per cell; shots are Poisson given the perturbed surface.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .court import GridSpec, PointPattern
from .evaluation import PAPER_RI, kmeans_partition, rand_index
from .intensity import FitError, IntensityGrid
from .pipeline import cluster_intensities, fit_patterns
from .similarity import normalized_surfaces

HOOP = (5.25, 25.0)
THREE_PT_RADIUS = 23.75
CORNER_OFFSET = 22.0


def _bumps(spec: GridSpec, centers, sigmas, weights) -> np.ndarray:
    xy = spec.centers()
    out = np.zeros(spec.n_cells)
    for (cx, cy), s, w in zip(centers, sigmas, weights):
        # Normalized 2-D Gaussian so weights are mass fractions before clipping.
        r2 = (xy[:, 0] - cx) ** 2 + (xy[:, 1] - cy) ** 2
        out += w * np.exp(-0.5 * r2 / s**2) / (2 * math.pi * s**2)
    return out


def three_point_spots(n_arc: int = 9) -> list[tuple[float, float]]:
    hx, hy = HOOP
    theta_max = math.asin(CORNER_OFFSET / THREE_PT_RADIUS)
    arc = [(hx + THREE_PT_RADIUS * math.cos(t), hy + THREE_PT_RADIUS * math.sin(t))
           for t in np.linspace(-theta_max, theta_max, n_arc)]
    corners = [(x, hy + s * CORNER_OFFSET) for x in (2.0, 9.0) for s in (-1, 1)]
    return arc + corners


def base_intensities(spec: GridSpec = GridSpec(), scale: float = 500.0) -> list[IntensityGrid]:
    """Rim-heavy, spread-out and rim-plus-three-point surfaces, each of mass ``scale``."""
    hx, hy = HOOP
    rim = _bumps(spec, [HOOP], [3.0], [1.0])
    spread = _bumps(spec, [(hx + 8.0, hy)], [11.0], [1.0])
    spots = three_point_spots()
    rim_and_three = _bumps(spec, [HOOP] + spots, [2.5] + [2.5] * len(spots),
                           [0.35] + [0.65 / len(spots)] * len(spots))
    out = []
    for f in (rim, spread, rim_and_three):
        out.append(IntensityGrid.from_lambda(spec, f * scale / (f.sum() * spec.cell_area)))
    return out


def perturb_intensity(base: IntensityGrid, noise_variance: float,
                      rng: np.random.Generator) -> IntensityGrid:
    if noise_variance < 0:
        raise ValueError("noise variance must be nonnegative")
    eps = rng.normal(0.0, math.sqrt(noise_variance), base.spec.n_cells)
    return IntensityGrid.from_lambda(base.spec, base.lam + np.abs(eps))


def simulate_pattern(intensity: IntensityGrid, rng: np.random.Generator,
                     label: str = "") -> PointPattern:
    """Poisson counts per cell, points uniform within their cell."""
    spec = intensity.spec
    counts = rng.poisson(intensity.lam * spec.cell_area)
    cells = np.repeat(np.arange(spec.n_cells), counts)
    iy, ix = np.divmod(cells, spec.nx)
    u = rng.random((len(cells), 2))
    x = spec.domain.x_min + (ix + u[:, 0]) * spec.dx
    y = spec.domain.y_min + (iy + u[:, 1]) * spec.dy
    # Keep the half-open cell convention under rounding.
    x = np.minimum(x, np.nextafter(spec.domain.x_min + (ix + 1) * spec.dx, -np.inf))
    y = np.minimum(y, np.nextafter(spec.domain.y_min + (iy + 1) * spec.dy, -np.inf))
    return PointPattern(np.column_stack([x, y]), label)


@dataclass
class SimReplicate:
    truth: np.ndarray
    patterns: list[PointPattern]
    intensities: list[IntensityGrid]


def generate_replicate(config: PipelineConfig, rng: np.random.Generator) -> SimReplicate:
    st = config.study
    bases = base_intensities(config.grid, st.expected_points)
    truth, patterns, surfaces = [], [], []
    for g, base in enumerate(bases, start=1):
        for p in range(st.players_per_group):
            lam = perturb_intensity(base, st.noise_variance, rng)
            surfaces.append(lam)
            patterns.append(simulate_pattern(lam, rng, f"g{g}_p{p + 1:02d}"))
            truth.append(g)
    return SimReplicate(np.array(truth), patterns, surfaces)


def _derived_seeds(seed: int) -> tuple[np.random.Generator, int, int]:
    data_ss, chain_ss, km_ss = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(data_ss), int(chain_ss.generate_state(1)[0]),
            int(km_ss.generate_state(1)[0]))


@dataclass
class ReplicateRun:
    replicate: SimReplicate
    fitted: list[IntensityGrid]
    cluster: object
    report: dict


def run_replicate_full(config: PipelineConfig, seed: int) -> ReplicateRun:
    t0 = time.perf_counter()
    data_rng, chain_seed, km_seed = _derived_seeds(seed)
    rep = generate_replicate(config, data_rng)
    fits = fit_patterns(rep.patterns, config)
    failed = [p.label for p, f in zip(rep.patterns, fits) if isinstance(f, FitError)]
    if failed:
        raise FitError(f"intensity fit failed for {', '.join(failed)}")
    fitted = [g for g, _ in fits]
    res = cluster_intensities(fitted, config, [p.label for p in rep.patterns], chain_seed)
    km = kmeans_partition(normalized_surfaces(fitted), 3, km_seed, config.study.kmeans_restarts)
    report = {
        "seed": seed,
        "k_hat": int(res.partition.max()),
        "k_mode": res.k_mode,
        "k_histogram": {str(k): v for k, v in res.k_histogram.items()},
        "group_sizes": np.bincount(res.partition)[1:].tolist(),
        "ri_mfm": rand_index(res.partition, rep.truth),
        "ri_kmeans": rand_index(km, rep.truth),
        "runtime": round(time.perf_counter() - t0, 3),
    }
    return ReplicateRun(rep, fitted, res, report)


def run_replicate(config: PipelineConfig, seed: int) -> dict:
    """Simulate, fit, group and score one replicate.

    Everything except ``runtime`` is a deterministic function of ``seed``.
    """
    return run_replicate_full(config, seed).report


def replicate_seeds(config: PipelineConfig) -> list[int]:
    ss = np.random.SeedSequence(config.study.seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(config.study.replicates)]


def aggregate(reports: list[dict]) -> dict:
    ri_m = np.array([r["ri_mfm"] for r in reports])
    ri_k = np.array([r["ri_kmeans"] for r in reports])
    hist: dict[str, int] = {}
    for r in reports:
        hist[str(r["k_hat"])] = hist.get(str(r["k_hat"]), 0) + 1
    modes: dict[str, int] = {}
    for r in reports:
        modes[str(r["k_mode"])] = modes.get(str(r["k_mode"]), 0) + 1
    return {
        "replicates": len(reports),
        "ri_mfm": {"mean": float(ri_m.mean()), "min": float(ri_m.min()), "max": float(ri_m.max())},
        "ri_kmeans": {"mean": float(ri_k.mean()), "min": float(ri_k.min()), "max": float(ri_k.max())},
        "k_hat_histogram": dict(sorted(hist.items(), key=lambda kv: int(kv[0]))),
        "k_mode_histogram": dict(sorted(modes.items(), key=lambda kv: int(kv[0]))),
        "published_ri": PAPER_RI,
    }


def run_study(config: PipelineConfig, out: Path | None = None, progress=None) -> tuple[list[dict], dict]:
    reports = []
    fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = (out / "replicates.jsonl").open("w", encoding="utf-8")
    try:
        for seed in replicate_seeds(config):
            rep = run_replicate(config, seed)
            reports.append(rep)
            if fh is not None:
                fh.write(json.dumps(rep) + "\n")
                fh.flush()
            if progress is not None:
                progress(rep)
    finally:
        if fh is not None:
            fh.close()
    agg = aggregate(reports)
    if out is not None:
        (out / "aggregate.json").write_text(json.dumps(agg, indent=2) + "\n", encoding="utf-8")
    return reports, agg


def nba_like_patterns(seed: int = 2019, spec: GridSpec = GridSpec()) -> tuple[list[PointPattern], np.ndarray]:
    """Twenty synthetic players in four shooting styles with 420-700 attempts each.

    This is how the bundled ``data/nba_like_shots.csv`` fixture was produced.
    """
    rng = np.random.default_rng(seed)
    rim, spread, rim_three = base_intensities(spec, 1.0)
    corners = [(x, HOOP[1] + s * CORNER_OFFSET) for x in (2.0, 6.0, 10.0) for s in (-1, 1)]
    mid = [(HOOP[0] + 15 * math.cos(t), HOOP[1] + 15 * math.sin(t)) for t in np.linspace(-1.2, 1.2, 7)]
    raw = _bumps(spec, corners + mid + [HOOP], [2.0] * 6 + [2.5] * 7 + [2.5],
                 [0.4 / 6] * 6 + [0.4 / 7] * 7 + [0.2])
    styles = [rim.lam, spread.lam, rim_three.lam, raw / (raw.sum() * spec.cell_area)]
    sizes = [6, 5, 5, 4]
    patterns, truth = [], []
    for g, (lam, size) in enumerate(zip(styles, sizes), start=1):
        for p in range(size):
            attempts = rng.uniform(420, 700)
            surface = IntensityGrid.from_lambda(spec, lam * attempts + np.abs(rng.normal(0, 0.02, spec.n_cells)))
            patterns.append(simulate_pattern(surface, rng, f"style{g}_player{p + 1}"))
            truth.append(g)
    return patterns, np.array(truth)
