"""Court domain, regular grid discretization, point patterns and shot-log CSV I/O.

Coordinates are in feet in the half-court frame: the hoop-side baseline sits
at ``x = 0`` and the sideline-to-sideline direction is ``y``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np


class InputError(ValueError):
    """Raised for malformed or out-of-contract input data."""


@dataclass(frozen=True)
class Domain:
    x_min: float = 0.0
    x_max: float = 47.0
    y_min: float = 0.0
    y_max: float = 50.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate domain {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)

    def contains(self, xy: np.ndarray) -> np.ndarray:
        """Boolean mask of rows of ``xy`` lying in the closed rectangle."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        return (
            (xy[:, 0] >= self.x_min)
            & (xy[:, 0] <= self.x_max)
            & (xy[:, 1] >= self.y_min)
            & (xy[:, 1] <= self.y_max)
        )


@dataclass(frozen=True)
class GridSpec:
    """Regular ``nx`` by ``ny`` grid over a domain.

    Cells are indexed row-major with ``x`` varying fastest:
    ``index = iy * nx + ix``.
    """

    domain: Domain = Domain()
    nx: int = 47
    ny: int = 50

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one cell per axis")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def dx(self) -> float:
        return (self.domain.x_max - self.domain.x_min) / self.nx

    @property
    def dy(self) -> float:
        return (self.domain.y_max - self.domain.y_min) / self.ny

    @property
    def cell_area(self) -> float:
        return self.domain.area / self.n_cells

    def x_centers(self) -> np.ndarray:
        return self.domain.x_min + (np.arange(self.nx) + 0.5) * self.dx

    def y_centers(self) -> np.ndarray:
        return self.domain.y_min + (np.arange(self.ny) + 0.5) * self.dy

    def centers(self) -> np.ndarray:
        """(n_cells, 2) array of cell centers in index order."""
        xx, yy = np.meshgrid(self.x_centers(), self.y_centers())
        return np.column_stack([xx.ravel(), yy.ravel()])

    def cell_index(self, xy: np.ndarray) -> np.ndarray:
        """Cell index of each point.

        A point on an interior cell edge goes to the cell with the larger
        index; the domain's upper edges belong to the last cell on that axis.
        """
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        if not self.domain.contains(xy).all():
            raise InputError("point outside the grid domain")
        ix = np.floor((xy[:, 0] - self.domain.x_min) / self.dx).astype(int)
        iy = np.floor((xy[:, 1] - self.domain.y_min) / self.dy).astype(int)
        np.clip(ix, 0, self.nx - 1, out=ix)
        np.clip(iy, 0, self.ny - 1, out=iy)
        return iy * self.nx + ix

    def cell_bounds(self, index: int) -> tuple[float, float, float, float]:
        iy, ix = divmod(int(index), self.nx)
        x0 = self.domain.x_min + ix * self.dx
        y0 = self.domain.y_min + iy * self.dy
        return x0, x0 + self.dx, y0, y0 + self.dy


@dataclass(frozen=True)
class PointPattern:
    points: np.ndarray
    label: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class CountGrid:
    spec: GridSpec
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (self.spec.n_cells,) or (counts < 0).any():
            raise ValueError("counts must be a nonnegative vector with one entry per cell")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def bin_counts(pattern: PointPattern, spec: GridSpec) -> CountGrid:
    idx = spec.cell_index(pattern.points)
    return CountGrid(spec, np.bincount(idx, minlength=spec.n_cells))


def parse_shot_csv(
    path: str | Path,
    domain: Domain = Domain(),
    min_attempts: int = 0,
) -> tuple[dict[str, PointPattern], int]:
    """Read a ``label,x,y`` shot log into one point pattern per label.

    Rows outside ``domain`` are counted as rejected rather than clamped.
    Labels with fewer than ``min_attempts`` retained shots are dropped.
    Returns the patterns (in first-appearance order) and the rejected count.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc

    buckets: dict[str, list[tuple[float, float]]] = {}
    rejected = 0
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return {}, 0
        cols = [h.strip().lower() for h in header]
        try:
            i_label, i_x, i_y = cols.index("label"), cols.index("x"), cols.index("y")
        except ValueError:
            raise InputError(f"{path}:1: header must contain label,x,y") from None
        width = len(cols)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise InputError(f"{path}:{line}: expected {width} fields, got {len(row)}")
            try:
                x, y = float(row[i_x]), float(row[i_y])
            except ValueError:
                raise InputError(f"{path}:{line}: non-numeric coordinate") from None
            if not (np.isfinite(x) and np.isfinite(y)):
                raise InputError(f"{path}:{line}: non-finite coordinate")
            if not domain.contains(np.array([x, y]))[0]:
                rejected += 1
                continue
            buckets.setdefault(row[i_label].strip(), []).append((x, y))

    patterns = {
        label: PointPattern(np.array(pts, dtype=float), label)
        for label, pts in buckets.items()
        if len(pts) >= min_attempts
    }
    return patterns, rejected


def write_shot_csv(path: str | Path, patterns: Iterable[PointPattern]) -> None:
    # str(float) is the shortest round-trip repr, so re-parsing is exact.
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", "x", "y"])
        for pat in patterns:
            writer.writerows((pat.label, float(x), float(y)) for x, y in pat.points)
