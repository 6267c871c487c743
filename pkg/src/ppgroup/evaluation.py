"""Partition agreement, the k-means baseline and classical MDS."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .similarity import SimilarityMatrix

# Published Rand indices of the competitors that are not re-run here.
PAPER_RI = {
    "mfm": 0.9988,
    "kmeans": 0.9005,
    "dbscan": 0.7642,
    "mean_shift": 0.7380,
}


def rand_index(a, b) -> float:
    """Fraction of pairs on which two partitions agree (together or apart)."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("partitions must be 1-d and of equal length")
    n = len(a)
    if n < 2:
        raise ValueError("need at least two items")
    same_a = a[:, None] == a[None, :]
    same_b = b[:, None] == b[None, :]
    iu = np.triu_indices(n, k=1)
    return float((same_a == same_b)[iu].mean())


@dataclass
class KMeansResult:
    labels: np.ndarray
    wcss: float
    history: list[float] = field(default_factory=list)


def _kmeanspp(X, k, rng):
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def lloyd(X, centers, max_iter=300) -> KMeansResult:
    """Lloyd iterations; ``history`` records the objective after each assignment."""
    history = []
    labels = None
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(X)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(len(centers)):
            members = X[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return KMeansResult(labels, history[-1], history)


def kmeans_partition(features, k: int, seed: int = 0, restarts: int = 10) -> np.ndarray:
    """Best-of-``restarts`` k-means (k-means++ seeding), labels ``1..k``."""
    X = np.asarray(features, dtype=float)
    n = len(X)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(restarts, 1)):
        res = lloyd(X, _kmeanspp(X, k, rng))
        if best is None or res.wcss < best.wcss:
            best = res
    # Relabel by first appearance.
    _, first, inv = np.unique(best.labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inv] + 1


@dataclass(frozen=True)
class Embedding2D:
    coords: np.ndarray
    eigenvalues: np.ndarray
    degenerate: bool = False


def classical_mds(sim: SimilarityMatrix | np.ndarray, dim: int = 2) -> Embedding2D:
    """Torgerson scaling of the distances ``-log H``.

    When fewer than ``dim`` eigenvalues are positive the missing axes are zero
    and ``degenerate`` is set.
    """
    H = np.asarray(getattr(sim, "H", sim), dtype=float)
    n = H.shape[0]
    if n < 2:
        raise ValueError("need at least two items")
    D = -np.log(H)
    np.fill_diagonal(D, 0.0)
    J = np.eye(n) - 1.0 / n
    Bm = -0.5 * J @ (D**2) @ J
    Bm = 0.5 * (Bm + Bm.T)
    evals, evecs = np.linalg.eigh(Bm)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    tol = 1e-12 * max(abs(evals).max(), 1e-300)
    keep = min(dim, int((evals > tol).sum()))
    coords = np.zeros((n, dim))
    coords[:, :keep] = evecs[:, :keep] * np.sqrt(evals[:keep])
    # Deterministic sign: largest-magnitude coordinate on each axis is positive.
    for j in range(keep):
        if coords[np.argmax(abs(coords[:, j])), j] < 0:
            coords[:, j] *= -1
    coords -= coords.mean(axis=0)
    return Embedding2D(coords, np.clip(evals[:dim], 0, None), keep < dim)
