"""Mixture-of-finite-mixtures grouping of a transformed similarity matrix.

Each off-diagonal entry ``S[i, j]`` (``i < j``) is Normal with mean
``U[z_i, z_j]`` and precision ``T[z_i, z_j]``; blocks carry conjugate
Normal-Gamma priors, the number of groups has a prior ``p(k)`` and the mixing
weights are Dirichlet(gamma) and integrated out. The collapsed Gibbs sampler
updates the block parameters and then every membership from its exact
conditional, opening new groups through the MFM urn.

Partitions handed to callers use contiguous labels ``1..k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import gammaln, logsumexp

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MfmPriors:
    gamma: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    # None means "mean of the off-diagonal entries of S" (see resolve()).
    mu0: float | None = None
    k0: float = 1.0
    # Rate of the zero-truncated Poisson prior on the number of groups.
    k_rate: float = 1.0
    # Optional override: log pmf over k = 1, 2, ... (vectorized).
    log_k_prior: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    def __post_init__(self):
        if min(self.gamma, self.alpha, self.beta, self.k0, self.k_rate) <= 0:
            raise ValueError("gamma, alpha, beta, k0 and k_rate must be positive")

    def log_pk(self, k: np.ndarray) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        if self.log_k_prior is not None:
            return np.asarray(self.log_k_prior(k), dtype=float)
        lam = self.k_rate
        # Poisson(lam) conditioned on k >= 1.
        return k * math.log(lam) - lam - gammaln(k + 1) - math.log(-math.expm1(-lam))

    def resolve(self, S: np.ndarray) -> "MfmPriors":
        if self.mu0 is not None:
            return self
        n = S.shape[0]
        return replace(self, mu0=float(S[np.triu_indices(n, k=1)].mean()) if n > 1 else 0.0)


@dataclass(frozen=True)
class VnTable:
    n: int
    log_vn: np.ndarray = field(repr=False)

    def __call__(self, w: int) -> float:
        """log V_n(w) for 1 <= w <= n."""
        return float(self.log_vn[w - 1])

    def log_ratio(self, w: int) -> float:
        """log V_n(w + 1) - log V_n(w)."""
        return float(self.log_vn[w] - self.log_vn[w - 1])


def _log_vn_terms(n: int, priors: MfmPriors, k: np.ndarray) -> np.ndarray:
    """Log series terms, shape (n, len(k)); row w-1 holds k_(w) / (gamma k)^(n) p(k)."""
    w = np.arange(1, n + 1)[:, None]
    kk = k[None, :].astype(float)
    gk = priors.gamma * kk
    with np.errstate(invalid="ignore"):
        falling = np.where(kk >= w, gammaln(kk + 1) - gammaln(np.maximum(kk - w + 1, 1)), -np.inf)
    return falling - (gammaln(gk + n) - gammaln(gk)) + priors.log_pk(kk)


def compute_log_vn(
    n: int,
    priors: MfmPriors = MfmPriors(),
    rel_tol: float = 1e-12,
    k_max: int | None = None,
) -> VnTable:
    """log V_n(w) for w = 1..n.

    With ``k_max`` the series is truncated there; otherwise it is extended
    until every row's last term is decreasing and below ``rel_tol`` times the
    running sum.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if k_max is not None:
        log_vn = logsumexp(_log_vn_terms(n, priors, np.arange(1, k_max + 1)), axis=1)
    else:
        K = n + 64
        while True:
            terms = _log_vn_terms(n, priors, np.arange(1, K + 1))
            log_vn = logsumexp(terms, axis=1)
            last, prev = terms[:, -1], terms[:, -2]
            done = (last < math.log(rel_tol) + log_vn) & ((last <= prev) | np.isneginf(last))
            if done.all() or K > 1_000_000:
                break
            K *= 2
    if not np.isfinite(log_vn).all():
        raise ValueError("V_n series is empty: the prior on k has no mass at or above w")
    return VnTable(n, log_vn)


@dataclass(frozen=True)
class BlockStats:
    """Count, mean and sum of squared deviations of a block's S entries."""

    n: int = 0
    mean: float = 0.0
    ssd: float = 0.0

    @classmethod
    def of(cls, values) -> "BlockStats":
        v = np.asarray(values, dtype=float).ravel()
        if v.size == 0:
            return cls()
        m = float(v.mean())
        return cls(int(v.size), m, float(((v - m) ** 2).sum()))

    @property
    def var(self) -> float:
        return self.ssd / (self.n - 1) if self.n >= 2 else 0.0


def posterior_params(stats: BlockStats, priors: MfmPriors) -> tuple[float, float, float, float]:
    """Conjugate update: ``(shape, rate, mean, kappa)``.

    ``T ~ Gamma(shape, rate)`` and ``U | T ~ N(mean, 1 / (kappa T))``.
    """
    n, k0, mu0 = stats.n, priors.k0, priors.mu0
    shape = priors.alpha + 0.5 * n
    rate = priors.beta
    if n:
        rate += 0.5 * stats.ssd + k0 * n * (stats.mean - mu0) ** 2 / (2.0 * (k0 + n))
    mean = (k0 * mu0 + n * stats.mean) / (k0 + n)
    return shape, rate, mean, k0 + n


def sample_block_precision(stats: BlockStats, priors: MfmPriors, rng: np.random.Generator) -> float:
    shape, rate, _, _ = posterior_params(stats, priors)
    if not rate > 0:
        raise ValueError(f"non-positive Gamma rate {rate}")
    return float(rng.gamma(shape, 1.0 / rate))


def sample_block_mean(
    stats: BlockStats, precision: float, priors: MfmPriors, rng: np.random.Generator
) -> float:
    _, _, mean, kappa = posterior_params(stats, priors)
    return float(rng.normal(mean, 1.0 / math.sqrt(kappa * precision)))


def log_ng_marginal(stats: BlockStats, priors: MfmPriors) -> float:
    """Log marginal density of a block's entries with (U, T) integrated out."""
    if stats.n == 0:
        return 0.0
    shape, rate, _, kappa = posterior_params(stats, priors)
    return (
        math.lgamma(shape) - math.lgamma(priors.alpha)
        + priors.alpha * math.log(priors.beta) - shape * math.log(rate)
        + 0.5 * math.log(priors.k0 / kappa)
        - 0.5 * stats.n * LOG_2PI
    )


def _grouped_stats(values: np.ndarray, groups: np.ndarray, k: int) -> list[BlockStats]:
    counts = np.bincount(groups, minlength=k)
    sums = np.bincount(groups, weights=values, minlength=k)
    means = np.divide(sums, counts, out=np.zeros(k), where=counts > 0)
    ssd = np.bincount(groups, weights=(values - means[groups]) ** 2, minlength=k)
    return [BlockStats(int(c), float(m), float(s)) for c, m, s in zip(counts, means, ssd)]


def log_marginal_row(i: int, z: np.ndarray, S: np.ndarray, priors: MfmPriors) -> float:
    """Log prior-predictive density of row ``i`` of ``S`` for a brand-new group.

    ``z`` holds labels ``1..k`` for every pattern; ``z[i]`` is ignored. The
    row entries ``S[i, j]`` are grouped by ``z[j]`` and each group contributes
    one Normal-Gamma marginal.
    """
    S = np.asarray(S, dtype=float)
    others = np.arange(S.shape[0]) != i
    if not others.any():
        return 0.0
    zo = np.asarray(z)[others] - 1
    stats = _grouped_stats(S[i, others], zo, int(zo.max()) + 1)
    return sum(log_ng_marginal(st, priors) for st in stats)


@dataclass(frozen=True)
class ClusterState:
    z: np.ndarray
    U: np.ndarray = field(repr=False)
    T: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return self.U.shape[0]

    def check(self) -> None:
        k = self.k
        if set(np.unique(self.z).tolist()) != set(range(1, k + 1)):
            raise AssertionError("labels are not contiguous 1..k")
        if not (np.array_equal(self.U, self.U.T) and np.array_equal(self.T, self.T.T)):
            raise AssertionError("block parameters are not symmetric")
        if not (self.T > 0).all():
            raise AssertionError("non-positive block precision")


def block_stats(z0: np.ndarray, k: int, S: np.ndarray) -> dict[tuple[int, int], BlockStats]:
    """Statistics of every block ``r <= s`` (0-based) over unordered pairs ``i < j``."""
    iu, ju = np.triu_indices(len(z0), k=1)
    a, b = z0[iu], z0[ju]
    r, s = np.minimum(a, b), np.maximum(a, b)
    flat = _grouped_stats(S[iu, ju], r * k + s, k * k)
    return {(p, q): flat[p * k + q] for p in range(k) for q in range(p, k)}


def update_block_params(z0, k, S, priors, rng):
    """Draw all T blocks, then all U blocks, from their conditionals given z."""
    stats = block_stats(z0, k, S)
    T = np.empty((k, k))
    U = np.empty((k, k))
    for (r, s), st in stats.items():
        T[r, s] = T[s, r] = sample_block_precision(st, priors, rng)
    for (r, s), st in stats.items():
        U[r, s] = U[s, r] = sample_block_mean(st, T[r, s], priors, rng)
    return U, T


def _drop_label(z0, U, T, label):
    keep = np.arange(U.shape[0]) != label
    z0 = np.where(z0 > label, z0 - 1, z0)
    return z0, U[np.ix_(keep, keep)], T[np.ix_(keep, keep)]


def _remove_site(i, z0, U, T):
    """Take pattern i out of its group, deleting the group if it empties."""
    z0 = z0.copy()
    label = z0[i]
    z0[i] = -1
    if not (z0 == label).any():
        z0, U, T = _drop_label(z0, U, T, label)
    return z0, U, T


def _membership_log_weights(i, z0, U, T, S, vn, priors):
    """Unnormalized log weights of joining each group 0..k-1, then a new group.

    ``z0`` already has ``i`` removed (``z0[i] == -1``).
    """
    k = U.shape[0]
    others = np.arange(len(z0)) != i
    zo = z0[others]
    s = S[i, others]
    Tc, Uc = T[:, zo], U[:, zo]
    loglik = 0.5 * (np.log(Tc) - LOG_2PI - Tc * (s - Uc) ** 2).sum(axis=1)
    sizes = np.bincount(zo, minlength=k)
    log_w = np.empty(k + 1)
    log_w[:k] = np.log(sizes + priors.gamma) + loglik
    if k == 0:
        log_w[k] = 0.0
    else:
        stats = _grouped_stats(s, zo, k)
        log_m = sum(log_ng_marginal(st, priors) for st in stats)
        log_w[k] = vn.log_ratio(k) + math.log(priors.gamma) + log_m
    return log_w


def _categorical(log_w, rng):
    p = np.exp(log_w - log_w.max())
    p /= p.sum()
    return int(rng.choice(len(p), p=p))


def _open_group(i, z0, U, T, S, priors, rng):
    k = U.shape[0]
    others = np.arange(len(z0)) != i
    stats = _grouped_stats(S[i, others], z0[others], k) if k else []
    U2 = np.empty((k + 1, k + 1))
    T2 = np.empty((k + 1, k + 1))
    U2[:k, :k], T2[:k, :k] = U, T
    for t, st in enumerate(stats + [BlockStats()]):
        T2[k, t] = T2[t, k] = sample_block_precision(st, priors, rng)
        U2[k, t] = U2[t, k] = sample_block_mean(st, T2[k, t], priors, rng)
    return U2, T2


def _update_site(i, z0, U, T, S, vn, priors, rng):
    z0, U, T = _remove_site(i, z0, U, T)
    log_w = _membership_log_weights(i, z0, U, T, S, vn, priors)
    c = _categorical(log_w, rng)
    if c == U.shape[0]:
        U, T = _open_group(i, z0, U, T, S, priors, rng)
    z0[i] = c
    return z0, U, T


def membership_conditional(
    state: ClusterState, i: int, S: np.ndarray, vn: VnTable, priors: MfmPriors
) -> tuple[np.ndarray, np.ndarray]:
    """Exact conditional of pattern ``i``'s group given everything else.

    Returns ``(z_minus_i, p)``: the relabeled memberships of the others (1-based,
    ``0`` at position ``i``) and probabilities over joining groups ``1..k`` or
    opening group ``k + 1``.
    """
    S = np.asarray(S, dtype=float)
    z0, U, T = _remove_site(i, state.z - 1, state.U, state.T)
    log_w = _membership_log_weights(i, z0, U, T, S, vn, priors)
    return z0 + 1, np.exp(log_w - logsumexp(log_w))


def update_membership(
    state: ClusterState, i: int, S: np.ndarray, vn: VnTable, priors: MfmPriors,
    rng: np.random.Generator,
) -> ClusterState:
    """Resample a single membership with the block parameters held fixed."""
    z0, U, T = _update_site(i, state.z - 1, state.U, state.T, np.asarray(S, float), vn, priors, rng)
    return ClusterState(z0 + 1, U, T)


def gibbs_sweep(
    state: ClusterState, S: np.ndarray, vn: VnTable, priors: MfmPriors, rng: np.random.Generator
) -> ClusterState:
    S = np.asarray(S, dtype=float)
    z0 = state.z - 1
    U, T = update_block_params(z0, state.k, S, priors, rng)
    for i in range(len(z0)):
        z0, U, T = _update_site(i, z0, U, T, S, vn, priors, rng)
    return ClusterState(z0 + 1, U, T)


@dataclass(frozen=True)
class PosteriorDraws:
    partitions: np.ndarray = field(repr=False)
    seed: int = 0
    iters: int = 0
    burnin: int = 0

    @property
    def ks(self) -> np.ndarray:
        return self.partitions.max(axis=1)

    def __len__(self) -> int:
        return len(self.partitions)


def initial_partition(S: np.ndarray, how: str, rng: np.random.Generator) -> np.ndarray:
    n = S.shape[0]
    if how == "one":
        return np.ones(n, dtype=int)
    if how == "singletons":
        return np.arange(1, n + 1)
    if how == "kmeans":
        from .evaluation import kmeans_partition

        rows = S.copy()
        np.fill_diagonal(rows, -np.inf)
        np.fill_diagonal(rows, rows.max(axis=1))
        k = min(n, math.ceil(math.sqrt(n)))
        return kmeans_partition(rows, k, seed=int(rng.integers(2**32)), restarts=5)
    raise ValueError(f"unknown initialization {how!r}")


def run_chain(
    S,
    priors: MfmPriors = MfmPriors(),
    iters: int = 1000,
    burnin: int = 500,
    seed: int = 0,
    callback: Callable[[int, np.ndarray], None] | None = None,
    init: str = "kmeans",
) -> PosteriorDraws:
    """Run one collapsed Gibbs chain.

    The default start over-segments: seeded k-means on the rows of ``S`` with
    ``ceil(sqrt(n))`` groups. Single-site moves cannot split a group once
    unrelated patterns share it, so neither the one-group start (``"one"``)
    nor ``"singletons"`` (whose one-entry blocks are too noisy on the first
    sweep) mixes reliably.

    ``callback(iteration, z)`` is invoked after every sweep (1-based
    iteration), including burn-in.
    """
    if not iters > burnin >= 0:
        raise ValueError("need iters > burnin >= 0")
    S = np.asarray(getattr(S, "S", S), dtype=float)
    n = S.shape[0]
    priors = priors.resolve(S)
    vn = compute_log_vn(n, priors)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    z_init = initial_partition(S, init, rng)
    k = int(z_init.max())
    # Block parameters are redrawn before they are first used.
    state = ClusterState(z_init, np.full((k, k), priors.mu0),
                         np.full((k, k), priors.alpha / priors.beta))
    kept = np.empty((iters - burnin, n), dtype=int)
    for it in range(1, iters + 1):
        state = gibbs_sweep(state, S, vn, priors, rng)
        if it > burnin:
            kept[it - burnin - 1] = state.z
        if callback is not None:
            callback(it, state.z)
    return PosteriorDraws(kept, seed, iters, burnin)


def membership_matrices(partitions: np.ndarray) -> np.ndarray:
    P = np.asarray(partitions)
    return P[:, :, None] == P[:, None, :]


def dahl_summary(draws: PosteriorDraws | np.ndarray) -> tuple[np.ndarray, int]:
    """Least-squares partition and its 1-based draw index."""
    P = np.asarray(getattr(draws, "partitions", draws))
    if P.ndim != 2 or len(P) == 0:
        raise ValueError("no draws to summarize")
    B = membership_matrices(P)
    Bbar = B.mean(axis=0)
    loss = ((B - Bbar) ** 2).sum(axis=(1, 2))
    best = int(np.argmin(loss))
    return P[best].copy(), best + 1


def posterior_k_histogram(draws: PosteriorDraws | np.ndarray) -> dict[int, float]:
    P = np.asarray(getattr(draws, "partitions", draws))
    if len(P) == 0:
        raise ValueError("no draws")
    ks = np.array([len(np.unique(row)) for row in P])
    values, counts = np.unique(ks, return_counts=True)
    return {int(v): float(c) / len(ks) for v, c in zip(values, counts)}


def modal_k(hist: dict[int, float]) -> int:
    # Smallest k among ties.
    return min(hist, key=lambda k: (-hist[k], k))


def write_draws_csv(path: str | Path, draws: PosteriorDraws) -> None:
    n = draws.partitions.shape[1]
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(",".join(["iter", "k"] + [f"z_{j}" for j in range(1, n + 1)]) + "\n")
        for off, row in enumerate(draws.partitions):
            it = draws.burnin + off + 1
            fh.write(",".join(map(str, [it, len(np.unique(row)), *row.tolist()])) + "\n")
