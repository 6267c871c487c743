"""Grouping spatial point patterns by similarity of their fitted intensities."""

from .court import CountGrid, Domain, GridSpec, InputError, PointPattern, bin_counts
from .intensity import CovarianceSpec, FitError, IntensityGrid, fit_lgcp_map
from .mfm import MfmPriors, dahl_summary, run_chain
from .similarity import fisher_transform, similarity_matrix

__version__ = "0.1.0"

__all__ = [
    "CountGrid", "CovarianceSpec", "bin_counts", "Domain", "FitError", "GridSpec", "InputError",
    "IntensityGrid", "MfmPriors", "PointPattern", "dahl_summary", "fisher_transform",
    "fit_lgcp_map", "run_chain", "similarity_matrix",
]
