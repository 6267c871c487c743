"""Command-line entry point.

Exit codes: 0 success, 1 input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .config import PipelineConfig, load_config
from .court import InputError, bin_counts, parse_shot_csv
from .intensity import FitError
from .pipeline import (cluster_intensities, fit_counts, load_intensities,
                       save_cluster_outputs, save_intensities, seed_stability)
from .similarity import read_labels, read_matrix_csv

log = logging.getLogger("ppgroup")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


def fixture_path() -> Path:
    """Path of the bundled 20-player synthetic shot log."""
    return Path(resources.files("ppgroup") / "data" / "nba_like_shots.csv")


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.fast:
        cfg = cfg.fast()
    return cfg.with_seed(args.seed)


def _shots_path(args) -> Path:
    if args.shots is None:
        return fixture_path()
    return Path(args.shots)


def _fit(cfg, shots: Path, out: Path) -> tuple[list[str], list, bool]:
    patterns, rejected = parse_shot_csv(shots, cfg.grid.domain, cfg.fit.min_attempts)
    log.info("%d patterns read from %s, %d rows outside the court", len(patterns), shots, rejected)
    if not patterns:
        raise InputError(f"{shots}: no patterns to fit")
    labels = list(patterns)
    fits = fit_counts([bin_counts(patterns[l], cfg.grid) for l in labels], cfg)
    save_intensities(out, labels, fits)
    ok = not any(isinstance(f, FitError) for f in fits)
    return labels, fits, ok


def cmd_fit_intensity(args) -> int:
    cfg = _config(args)
    _, _, ok = _fit(cfg, _shots_path(args), Path(args.out))
    return EXIT_OK if ok else EXIT_NUMERIC


def _cluster_dir(cfg, intensity_dir: Path, out: Path):
    labels, grids = load_intensities(intensity_dir)
    res = cluster_intensities(grids, cfg, labels)
    save_cluster_outputs(out, res)
    log.info("k = %d (posterior mode %d), sizes %s", res.partition.max(), res.k_mode,
             np.bincount(res.partition)[1:].tolist())
    return res


def cmd_cluster(args) -> int:
    cfg = _config(args)
    _cluster_dir(cfg, Path(args.intensities), Path(args.out))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    _, _, ok = _fit(cfg, _shots_path(args), out / "intensity")
    if not ok:
        log.error("some intensity fits failed; see intensity/manifest.json")
        return EXIT_NUMERIC
    _cluster_dir(cfg, out / "intensity", out / "cluster")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simulation import run_study

    cfg = _config(args)
    study = cfg.study
    if args.replicates is not None:
        study = dataclasses.replace(study, replicates=args.replicates)
    if args.seed is not None:
        study = dataclasses.replace(study, seed=args.seed)
    cfg = dataclasses.replace(cfg, study=study)

    def progress(rep):
        log.info("replicate seed=%d k_hat=%d ri_mfm=%.4f ri_kmeans=%.4f (%.1fs)",
                 rep["seed"], rep["k_hat"], rep["ri_mfm"], rep["ri_kmeans"], rep["runtime"])

    _, agg = run_study(cfg, Path(args.out), progress)
    print(json.dumps(agg, indent=2))
    return EXIT_OK


def cmd_seed_stability(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reference = None
    if args.similarity:
        S = read_matrix_csv(args.similarity)
    elif args.intensities:
        labels, grids = load_intensities(Path(args.intensities))
        from .similarity import fisher_transform, similarity_matrix
        S = fisher_transform(similarity_matrix(grids), cfg.clamp).S
    else:
        from .simulation import _derived_seeds, generate_replicate, replicate_seeds
        from .pipeline import fit_patterns
        from .similarity import fisher_transform, similarity_matrix
        rep = generate_replicate(cfg, _derived_seeds(replicate_seeds(cfg)[0])[0])
        fits = fit_patterns(rep.patterns, cfg)
        if any(isinstance(f, FitError) for f in fits):
            return EXIT_NUMERIC
        S = fisher_transform(similarity_matrix([g for g, _ in fits]), cfg.clamp).S
        reference = rep.truth
    if args.reference:
        reference = np.array([int(v) for v in read_labels(args.reference)])

    base = cfg.mcmc.seed
    seeds = args.seeds or [base + c for c in range(args.chains or cfg.chains)]
    res = seed_stability(S, cfg, seeds, reference)

    with (out / "pairwise_ri.csv").open("w", encoding="utf-8") as fh:
        fh.write("seed_a,seed_b,ri\n")
        for a in range(len(seeds)):
            for b in range(a + 1, len(seeds)):
                fh.write(f"{seeds[a]},{seeds[b]},{res.pairwise_ri[a, b]!r}\n")
    with (out / "trace.csv").open("w", encoding="utf-8") as fh:
        fh.write("chain,seed,iter,ri\n")
        for c, row in enumerate(res.traces):
            for it, ri in enumerate(row.tolist(), start=1):
                fh.write(f"{c + 1},{seeds[c]},{it},{ri!r}\n")
    summary = {"seeds": seeds, "mean_pairwise_ri": res.mean_pairwise_ri,
               "partitions": [p.tolist() for p in res.partitions],
               "reference": "truth" if reference is not None else "chain 1 Dahl partition"}
    (out / "seed_stability.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"mean pairwise RI over {len(seeds)} chains: {res.mean_pairwise_ri:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults for anything omitted)")
    common.add_argument("--seed", type=int, help="MCMC seed (simulate: study seed)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--fast", action="store_true", help="coarse 24x25 grid profile")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ppgroup", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit-intensity", parents=[common], help="fit one LGCP surface per label")
    s.add_argument("--shots", help="label,x,y CSV (default: bundled 20-player fixture)")
    s.set_defaults(func=cmd_fit_intensity)

    s = sub.add_parser("cluster", parents=[common], help="group fitted surfaces")
    s.add_argument("--intensities", required=True, help="directory written by fit-intensity")
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("pipeline", parents=[common], help="fit-intensity followed by cluster")
    s.add_argument("--shots", help="label,x,y CSV (default: bundled 20-player fixture)")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("simulate", parents=[common], help="three-group simulation study")
    s.add_argument("--replicates", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("seed-stability", parents=[common], help="compare chains across seeds")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--intensities", help="directory written by fit-intensity")
    src.add_argument("--similarity", help="transformed similarity matrix CSV (S.csv)")
    s.add_argument("--reference", help="file with one reference label per line for the traces")
    s.add_argument("--chains", type=int)
    s.add_argument("--seeds", type=int, nargs="+")
    s.set_defaults(func=cmd_seed_stability)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except (FitError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
