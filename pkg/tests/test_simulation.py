import dataclasses
import math

import numpy as np
import pytest

from ppgroup.config import FAST_GRID, McmcSettings, PipelineConfig
from ppgroup.court import bin_counts
from ppgroup.intensity import IntensityGrid
from ppgroup.simulation import (HOOP, aggregate, base_intensities, generate_replicate,
                                perturb_intensity, replicate_seeds, run_replicate,
                                simulate_pattern)


def small_config(players=4):
    cfg = PipelineConfig().fast()
    return dataclasses.replace(
        cfg,
        study=dataclasses.replace(cfg.study, players_per_group=players, replicates=2),
        mcmc=McmcSettings(iters=200, burnin=100, seed=0),
    )


def near_rim_fraction(grid, radius=8.0):
    xy = grid.spec.centers()
    near = np.hypot(xy[:, 0] - HOOP[0], xy[:, 1] - HOOP[1]) <= radius
    return grid.lam[near].sum() / grid.lam.sum()


def test_base_surfaces_mass_and_shape():
    bases = base_intensities()
    for b in bases:
        assert (b.lam >= 0).all()
        assert b.mass == pytest.approx(500.0, rel=1e-10)
    rim, spread, rim_three = (near_rim_fraction(b) for b in bases)
    assert rim > 0.8
    assert rim_three < 0.6
    assert spread < rim
    # The third surface puts real mass beyond the arc.
    xy = bases[2].spec.centers()
    far = np.hypot(xy[:, 0] - HOOP[0], xy[:, 1] - HOOP[1]) > 20
    assert bases[2].lam[far].sum() / bases[2].lam.sum() > 0.4


def test_perturb_zero_variance_is_identity():
    base = base_intensities(FAST_GRID)[0]
    out = perturb_intensity(base, 0.0, np.random.default_rng(0))
    assert np.array_equal(out.lam, base.lam)
    with pytest.raises(ValueError):
        perturb_intensity(base, -1.0, np.random.default_rng(0))


def test_perturb_adds_half_normal():
    base = base_intensities(FAST_GRID)[1]
    inc = perturb_intensity(base, 0.5, np.random.default_rng(3)).lam - base.lam
    assert (inc >= 0).all()
    mean = math.sqrt(2 * 0.5 / math.pi)
    sd = math.sqrt(0.5 * (1 - 2 / math.pi))
    assert abs(inc.mean() - mean) < 5 * sd / math.sqrt(inc.size)


def test_simulate_zero_intensity_is_empty():
    zero = IntensityGrid.from_lambda(FAST_GRID, np.zeros(FAST_GRID.n_cells))
    assert len(simulate_pattern(zero, np.random.default_rng(0)).points) == 0


def test_simulated_counts_are_poisson_means():
    spec = FAST_GRID
    lam = IntensityGrid.from_lambda(spec, np.full(spec.n_cells, 0.3))
    rng = np.random.default_rng(5)
    reps = 200
    tot = np.zeros(spec.n_cells)
    for _ in range(reps):
        pp = simulate_pattern(lam, rng)
        # Binning the simulated points recovers the per-cell draws.
        tot += bin_counts(pp, spec).counts
    mu = 0.3 * spec.cell_area
    z = (tot / reps - mu) / math.sqrt(mu / reps)
    assert abs(z.mean()) < 5 / math.sqrt(spec.n_cells)
    assert np.abs(z).max() < 5.5


def test_generate_replicate_layout():
    cfg = small_config(players=3)
    rep = generate_replicate(cfg, np.random.default_rng(1))
    assert rep.truth.tolist() == [1, 1, 1, 2, 2, 2, 3, 3, 3]
    assert len(rep.patterns) == 9 and len({p.label for p in rep.patterns}) == 9
    # 500 expected from the base plus E|eps| = sqrt(1/pi) per unit area of noise.
    expected = 500 + math.sqrt(1 / math.pi) * FAST_GRID.domain.area
    for p in rep.patterns:
        assert abs(len(p.points) - expected) < 6 * math.sqrt(expected)


def test_replicate_report_schema_and_determinism():
    cfg = small_config()
    seed = replicate_seeds(cfg)[0]
    a = run_replicate(cfg, seed)
    b = run_replicate(cfg, seed)
    assert {"k_hat", "ri_mfm", "ri_kmeans", "seed", "runtime"} <= set(a)
    assert 0.0 <= a["ri_mfm"] <= 1.0 and 0.0 <= a["ri_kmeans"] <= 1.0
    assert sum(a["group_sizes"]) == 12 and a["k_hat"] == len(a["group_sizes"])
    a.pop("runtime"), b.pop("runtime")
    assert a == b
    agg = aggregate([a, a])
    assert agg["ri_mfm"]["mean"] == a["ri_mfm"]
    assert agg["k_hat_histogram"] == {str(a["k_hat"]): 2}


def test_replicate_seeds_distinct():
    seeds = replicate_seeds(PipelineConfig())
    assert len(seeds) == 10 and len(set(seeds)) == 10
    assert seeds == replicate_seeds(PipelineConfig())
