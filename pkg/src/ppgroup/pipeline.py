"""In-process orchestration: fit surfaces, build similarities, group, summarize."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import PipelineConfig
from .court import CountGrid, InputError, PointPattern, bin_counts
from .evaluation import Embedding2D, classical_mds, rand_index
from .intensity import (FitError, FitReport, IntensityGrid, fit_lgcp_map,
                        read_intensity_csv, write_intensity_csv)
from .mfm import (PosteriorDraws, dahl_summary, modal_k, posterior_k_histogram,
                  run_chain, write_draws_csv)
from .similarity import (SimilarityMatrix, TransformedSimilarity, fisher_transform,
                         similarity_matrix, write_labels, write_matrix_csv)

log = logging.getLogger(__name__)

SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["labels", "partition", "group_sizes", "k", "k_mode", "k_histogram",
                 "c_ls", "seed", "iters", "burnin"],
    "properties": {
        "labels": {"type": "array", "items": {"type": "string"}},
        "partition": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "group_sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "k": {"type": "integer", "minimum": 1},
        "k_mode": {"type": "integer", "minimum": 1},
        "k_histogram": {"type": "object",
                        "patternProperties": {"^[0-9]+$": {"type": "number"}},
                        "additionalProperties": False},
        "c_ls": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "iters": {"type": "integer"},
        "burnin": {"type": "integer"},
    },
}


def _fit_one(args):
    counts, cov, tol, max_iter = args
    try:
        return fit_lgcp_map(counts, cov, tol=tol, max_iter=max_iter)
    except FitError as exc:
        return exc


def fit_counts(counts: Sequence[CountGrid], config: PipelineConfig) -> list:
    """Fit every count grid; failed fits come back as :class:`FitError` objects."""
    jobs = [(c, config.covariance, config.fit.tol, config.fit.max_iter) for c in counts]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            return list(pool.map(_fit_one, jobs))
    return [_fit_one(j) for j in jobs]


def fit_patterns(patterns: Sequence[PointPattern], config: PipelineConfig) -> list:
    return fit_counts([bin_counts(p, config.grid) for p in patterns], config)


@dataclass
class ClusterResult:
    labels: list[str]
    H: SimilarityMatrix
    S: TransformedSimilarity
    draws: PosteriorDraws
    partition: np.ndarray
    c_ls: int
    k_histogram: dict[int, float]
    embedding: Embedding2D = field(repr=False)

    @property
    def k_mode(self) -> int:
        return modal_k(self.k_histogram)

    def summary(self) -> dict:
        sizes = np.bincount(self.partition)[1:]
        return {
            "labels": list(self.labels),
            "partition": self.partition.tolist(),
            "group_sizes": sizes.tolist(),
            "k": int(len(sizes)),
            "k_mode": self.k_mode,
            "k_histogram": {str(k): v for k, v in self.k_histogram.items()},
            "c_ls": self.c_ls,
            "seed": self.draws.seed,
            "iters": self.draws.iters,
            "burnin": self.draws.burnin,
        }


def cluster_intensities(
    intensities: Sequence[IntensityGrid],
    config: PipelineConfig,
    labels: Sequence[str] | None = None,
    seed: int | None = None,
) -> ClusterResult:
    labels = list(labels) if labels is not None else [str(i + 1) for i in range(len(intensities))]
    H = similarity_matrix(intensities)
    S = fisher_transform(H, config.clamp)
    seed = config.mcmc.seed if seed is None else seed
    draws = run_chain(S, config.priors, config.mcmc.iters, config.mcmc.burnin, seed)
    partition, c_ls = dahl_summary(draws)
    return ClusterResult(labels, H, S, draws, partition, c_ls,
                         posterior_k_histogram(draws), classical_mds(H))


def safe_filename(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", label).strip("._") or "pattern"


def save_intensities(out: Path, labels, fits) -> dict:
    """Write one intensity CSV per label plus ``manifest.json``; return the manifest."""
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    used: set[str] = set()
    for i, (label, res) in enumerate(zip(labels, fits)):
        stem = safe_filename(label)
        if stem in used:
            stem = f"{stem}_{i}"
        used.add(stem)
        if isinstance(res, FitError):
            rep = res.report or FitReport(0, float("nan"), float("nan"), False)
            entries.append({"label": label, "file": None, "status": "failed",
                            "error": str(res), "iterations": rep.iterations,
                            "grad_norm": rep.grad_norm, "log_posterior": rep.log_posterior})
            continue
        grid, rep = res
        fname = f"{stem}.csv"
        write_intensity_csv(out / fname, grid)
        entries.append({"label": label, "file": fname, "status": "ok",
                        "iterations": rep.iterations, "grad_norm": rep.grad_norm,
                        "log_posterior": rep.log_posterior})
    manifest = {"patterns": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


def load_intensities(directory: Path) -> tuple[list[str], list[IntensityGrid]]:
    """Read surfaces listed in ``manifest.json`` (or every ``*.csv``, sorted)."""
    directory = Path(directory)
    manifest = directory / "manifest.json"
    if manifest.exists():
        entries = json.loads(manifest.read_text(encoding="utf-8"))["patterns"]
        pairs = [(e["label"], directory / e["file"]) for e in entries if e.get("file")]
    else:
        pairs = [(p.stem, p) for p in sorted(directory.glob("*.csv"))]
    if len(pairs) < 2:
        raise InputError(f"{directory}: need at least two intensity files")
    labels, grids = [], []
    for label, path in pairs:
        labels.append(label)
        grids.append(read_intensity_csv(path))
    ref = grids[0].spec
    bad = [str(p) for (_, p), g in zip(pairs, grids) if g.spec != ref]
    if bad:
        raise InputError(f"grid mismatch with {pairs[0][1]}: {', '.join(bad)}")
    return labels, grids


def save_cluster_outputs(out: Path, result: ClusterResult) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(out / "H.csv", result.H.H)
    write_matrix_csv(out / "S.csv", result.S.S)
    write_labels(out / "labels.txt", result.labels)
    write_draws_csv(out / "draws.csv", result.draws)
    (out / "summary.json").write_text(json.dumps(result.summary(), indent=2) + "\n",
                                      encoding="utf-8")
    with (out / "embedding.csv").open("w", encoding="utf-8") as fh:
        fh.write("label,u,v\n")
        for label, (u, v) in zip(result.labels, result.embedding.coords[:, :2].tolist()):
            fh.write(f"{label},{u!r},{v!r}\n")


@dataclass
class SeedStability:
    seeds: list[int]
    partitions: list[np.ndarray]
    pairwise_ri: np.ndarray
    traces: np.ndarray  # (chains, iters) RI against the reference

    @property
    def mean_pairwise_ri(self) -> float:
        c = len(self.seeds)
        if c < 2:
            return 1.0
        return float(self.pairwise_ri[np.triu_indices(c, k=1)].mean())


def seed_stability(S, config: PipelineConfig, seeds: Sequence[int], reference=None) -> SeedStability:
    """Run one chain per seed; compare Dahl partitions pairwise and trace RI.

    Without a ``reference`` the traces are against the first chain's Dahl
    partition.
    """
    parts, traces = [], []
    for seed in seeds:
        zs = []
        draws = run_chain(S, config.priors, config.mcmc.iters, config.mcmc.burnin, seed,
                          callback=lambda it, z: zs.append(z.copy()))
        parts.append(dahl_summary(draws)[0])
        traces.append(zs)
    ref = parts[0] if reference is None else np.asarray(reference)
    tr = np.array([[rand_index(z, ref) for z in zs] for zs in traces])
    c = len(seeds)
    pair = np.ones((c, c))
    for a in range(c):
        for b in range(a + 1, c):
            pair[a, b] = pair[b, a] = rand_index(parts[a], parts[b])
    return SeedStability(list(seeds), parts, pair, tr)
