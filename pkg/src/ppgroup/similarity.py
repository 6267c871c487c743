"""Pairwise similarity of fitted intensity surfaces and its Fisher z-transform."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .court import InputError
from .intensity import IntensityGrid


@dataclass(frozen=True)
class SimilarityMatrix:
    H: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class TransformedSimilarity:
    S: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.S.shape[0]

    def off_diagonal(self) -> np.ndarray:
        return self.S[np.triu_indices(self.n, k=1)]


def normalized_surfaces(intensities: Sequence[IntensityGrid]) -> np.ndarray:
    """Stack surfaces as rows, each scaled to unit sum."""
    if not intensities:
        raise InputError("no intensity surfaces given")
    spec = intensities[0].spec
    for i, grid in enumerate(intensities):
        if grid.spec != spec:
            raise InputError(f"surface {i} is on a different grid than surface 0")
    C = np.vstack([g.lam for g in intensities])
    totals = C.sum(axis=1)
    if (totals <= 0).any():
        raise InputError(f"surface {int(np.argmin(totals))} has zero total mass")
    return C / totals[:, None]


def similarity_matrix(intensities: Sequence[IntensityGrid]) -> SimilarityMatrix:
    if len(intensities) < 2:
        raise InputError("need at least two surfaces")
    P = normalized_surfaces(intensities)
    H = np.exp(-squareform(pdist(P)))
    np.fill_diagonal(H, 1.0)
    return SimilarityMatrix(H)


def fisher_transform(sim: SimilarityMatrix, clamp: float = 1e-10) -> TransformedSimilarity:
    if not 0 < clamp < 1e-3:
        raise ValueError("clamp must lie in (0, 1e-3)")
    # Identical surfaces would map to +inf.
    return TransformedSimilarity(np.arctanh(np.minimum(sim.H, 1.0 - clamp)))


def write_matrix_csv(path: str | Path, M: np.ndarray) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in np.asarray(M, dtype=float):
            fh.write(",".join(repr(v) for v in row.tolist()) + "\n")


def read_matrix_csv(path: str | Path) -> np.ndarray:
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    rows.append([float(v) for v in line.split(",")])
                except ValueError:
                    raise InputError(f"{path}:{lineno}: non-numeric entry") from None
    M = np.array(rows, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError(f"{path}: matrix is not square")
    return M


def write_labels(path: str | Path, labels: Sequence[str]) -> None:
    Path(path).write_text("".join(f"{lab}\n" for lab in labels), encoding="utf-8")


def read_labels(path: str | Path) -> list[str]:
    return [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln]
