"""Log-Gaussian Cox process intensity fitting on a regular grid.

The latent log-intensity ``z`` has a Gaussian prior ``N(mean, K)`` over cell
centers and the counts are Poisson with mean ``a * exp(z)`` per cell of area
``a``. :func:`fit_lgcp_map` returns the posterior mode found by damped Newton.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist
from scipy.special import ndtr

from .court import CountGrid, Domain, GridSpec, InputError, PointPattern

JITTER = 1e-6
KDE_FLOOR = 1e-8
MAX_HALVINGS = 30


class FitError(RuntimeError):
    """Numerical failure of the intensity fit; carries the partial report."""

    def __init__(self, message: str, report: "FitReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class CovarianceSpec:
    kernel: Literal["matern32", "squared_exponential"] = "matern32"
    sigma2: float = 1.0
    rho: float = 6.0
    # None selects log(max(T, 1) / area) from the data being fitted.
    mean: float | None = None

    def __post_init__(self):
        if self.kernel not in ("matern32", "squared_exponential"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if not (self.sigma2 > 0 and self.rho > 0):
            raise ValueError("sigma2 and rho must be positive")

    def k(self, d: np.ndarray) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        if self.kernel == "matern32":
            r = math.sqrt(3.0) * d / self.rho
            return self.sigma2 * (1.0 + r) * np.exp(-r)
        return self.sigma2 * np.exp(-0.5 * (d / self.rho) ** 2)

    def prior_mean(self, n_points: int, domain: Domain) -> float:
        if self.mean is not None:
            return float(self.mean)
        return math.log(max(n_points, 1) / domain.area)


@dataclass(frozen=True)
class IntensityGrid:
    spec: GridSpec
    lam: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if lam.shape != (self.spec.n_cells,) or z.shape != lam.shape:
            raise ValueError("intensity must have one value per grid cell")
        if not np.isfinite(lam).all() or (lam < 0).any():
            raise ValueError("intensity must be finite and nonnegative")
        lam.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "z", z)

    @classmethod
    def from_log(cls, spec: GridSpec, z: np.ndarray) -> "IntensityGrid":
        z = np.asarray(z, dtype=float)
        return cls(spec, np.exp(z), z)

    @classmethod
    def from_lambda(cls, spec: GridSpec, lam: np.ndarray) -> "IntensityGrid":
        lam = np.asarray(lam, dtype=float)
        with np.errstate(divide="ignore"):
            return cls(spec, lam, np.log(lam))

    @property
    def mass(self) -> float:
        """Expected number of points, the integral of the surface."""
        return float(self.lam.sum() * self.spec.cell_area)

    def as_image(self) -> np.ndarray:
        """``(ny, nx)`` view for plotting, row ``iy`` and column ``ix``."""
        return self.lam.reshape(self.spec.ny, self.spec.nx)


@dataclass(frozen=True)
class FitReport:
    iterations: int
    grad_norm: float
    log_posterior: float
    converged: bool = True


def covariance_matrix(spec: GridSpec, cov: CovarianceSpec) -> np.ndarray:
    centers = spec.centers()
    K = cov.k(cdist(centers, centers))
    K[np.diag_indices_from(K)] += JITTER * cov.sigma2
    return K


@functools.lru_cache(maxsize=4)
def _prior_factor(spec: GridSpec, kernel: str, sigma2: float, rho: float):
    K = covariance_matrix(spec, CovarianceSpec(kernel, sigma2, rho))
    try:
        chol = linalg.cho_factor(K, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise FitError(f"prior covariance is not positive definite: {exc}") from exc
    K.setflags(write=False)
    return K, chol


def prior_factor(spec: GridSpec, cov: CovarianceSpec):
    """Cached ``(K, cho_factor(K))`` for a grid and covariance."""
    return _prior_factor(spec, cov.kernel, float(cov.sigma2), float(cov.rho))


def lgcp_log_posterior(z: np.ndarray, counts: CountGrid, cov: CovarianceSpec) -> float:
    """Unnormalized log posterior of the latent field, computed directly in ``z``."""
    a = counts.spec.cell_area
    mu = cov.prior_mean(counts.total, counts.spec.domain)
    _, chol = prior_factor(counts.spec, cov)
    r = z - mu
    return float(counts.counts @ z - a * np.exp(z).sum() - 0.5 * r @ linalg.cho_solve(chol, r))


def lgcp_gradient(z: np.ndarray, counts: CountGrid, cov: CovarianceSpec) -> np.ndarray:
    a = counts.spec.cell_area
    mu = cov.prior_mean(counts.total, counts.spec.domain)
    _, chol = prior_factor(counts.spec, cov)
    return counts.counts - a * np.exp(z) - linalg.cho_solve(chol, z - mu)


def fit_lgcp_map(
    counts: CountGrid,
    cov: CovarianceSpec = CovarianceSpec(),
    tol: float = 1e-6,
    max_iter: int = 100,
    z0: np.ndarray | None = None,
) -> tuple[IntensityGrid, FitReport]:
    """Posterior mode of the discretized LGCP by damped Newton.

    The iterate is carried as ``alpha = K^-1 (z - mean)`` so that neither the
    ill-conditioned ``K`` nor its inverse is ever solved against directly; each
    Newton system goes through ``B = I + W^1/2 K W^1/2`` whose eigenvalues are
    at least one.
    """
    spec = counts.spec
    a = spec.cell_area
    n = counts.counts.astype(float)
    mu = cov.prior_mean(counts.total, spec.domain)
    K, chol = prior_factor(spec, cov)

    if z0 is None:
        alpha = np.zeros(spec.n_cells)
        z = np.full(spec.n_cells, mu)
    else:
        z = np.asarray(z0, dtype=float).copy()
        alpha = linalg.cho_solve(chol, z - mu)

    def objective(z, alpha):
        return float(n @ z - a * np.exp(z).sum() - 0.5 * (z - mu) @ alpha)

    value = objective(z, alpha)
    for it in range(max_iter + 1):
        w = a * np.exp(z)
        grad = n - w - alpha
        gnorm = float(np.abs(grad).max())
        if gnorm <= tol:
            return IntensityGrid.from_log(spec, z), FitReport(it, gnorm, value)
        if it == max_iter:
            break

        sw = np.sqrt(w)
        B = np.eye(spec.n_cells) + sw[:, None] * K * sw[None, :]
        try:
            L = linalg.cholesky(B, lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise FitError(f"Newton system not positive definite: {exc}",
                           FitReport(it, gnorm, value, False)) from exc
        b = w * (z - mu) + n - w
        c = linalg.solve_triangular(L, sw * (K @ b), lower=True, check_finite=False)
        alpha_new = b - sw * linalg.solve_triangular(L, c, lower=True, trans="T",
                                                     check_finite=False)
        dalpha = alpha_new - alpha
        dz = K @ dalpha

        step = 1.0
        for _ in range(MAX_HALVINGS + 1):
            z_try = z + step * dz
            alpha_try = alpha + step * dalpha
            v_try = objective(z_try, alpha_try)
            if np.isfinite(v_try) and v_try >= value:
                break
            step *= 0.5
        else:
            raise FitError("line search failed to increase the log posterior",
                           FitReport(it, gnorm, value, False))
        z, alpha, value = z_try, alpha_try, v_try

    raise FitError(f"no convergence within {max_iter} Newton iterations",
                   FitReport(max_iter, gnorm, value, False))


def kernel_intensity(pattern: PointPattern, spec: GridSpec, bandwidth: float) -> IntensityGrid:
    """Edge-corrected Gaussian kernel estimate normalized to the pattern size."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    a = spec.cell_area
    if len(pattern) == 0:
        return IntensityGrid.from_lambda(spec, np.full(spec.n_cells, KDE_FLOOR / a))

    centers = spec.centers()
    d2 = cdist(centers, pattern.points, "sqeuclidean")
    dens = np.exp(-0.5 * d2 / bandwidth**2).sum(axis=1)
    dom = spec.domain
    cx, cy = centers[:, 0], centers[:, 1]
    inside = (ndtr((dom.x_max - cx) / bandwidth) - ndtr((dom.x_min - cx) / bandwidth)) * (
        ndtr((dom.y_max - cy) / bandwidth) - ndtr((dom.y_min - cy) / bandwidth)
    )
    lam = dens / inside
    total = lam.sum() * a
    if total <= 0:
        # All points further than ~38 bandwidths from every cell center.
        lam = np.full(spec.n_cells, 1.0)
        total = lam.sum() * a
    lam *= len(pattern) / total
    return IntensityGrid.from_lambda(spec, lam)


def pp_loglik(intensity: IntensityGrid, pattern: PointPattern) -> float:
    """Poisson-process log-likelihood with piecewise-constant intensity."""
    idx = intensity.spec.cell_index(pattern.points)
    with np.errstate(divide="ignore"):
        point_term = np.log(intensity.lam[idx]).sum()
    return float(point_term - intensity.lam.sum() * intensity.spec.cell_area)


def write_intensity_csv(path: str | Path, grid: IntensityGrid) -> None:
    s, d = grid.spec, grid.spec.domain
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"# nx={s.nx} ny={s.ny} x_min={d.x_min!r} y_min={d.y_min!r} "
                 f"x_max={d.x_max!r} y_max={d.y_max!r}\n")
        for i, (lam, z) in enumerate(zip(grid.lam.tolist(), grid.z.tolist())):
            fh.write(f"{i},{lam!r},{z!r}\n")


def read_intensity_csv(path: str | Path) -> IntensityGrid:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise InputError(f"{path}: missing grid header line")
        try:
            meta = dict(tok.split("=", 1) for tok in header[1:].split())
            spec = GridSpec(
                Domain(float(meta["x_min"]), float(meta["x_max"]),
                       float(meta["y_min"]), float(meta["y_max"])),
                int(meta["nx"]), int(meta["ny"]),
            )
        except (KeyError, ValueError) as exc:
            raise InputError(f"{path}: bad grid header: {exc}") from None
        lam = np.empty(spec.n_cells)
        z = np.empty(spec.n_cells)
        seen = np.zeros(spec.n_cells, dtype=bool)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                i, l, zz = line.split(",")
                i = int(i)
                lam[i], z[i] = float(l), float(zz)
            except (ValueError, IndexError):
                raise InputError(f"{path}:{lineno}: malformed intensity row") from None
            seen[i] = True
    if not seen.all():
        raise InputError(f"{path}: {int((~seen).sum())} cells missing")
    return IntensityGrid(spec, lam, z)
