"""Doubly-robust estimation of log-concave counterfactual densities.

The pipeline estimates the counterfactual CDF of a treatment arm with a
one-step (augmented inverse-probability weighted) estimator on a grid,
corrects it into a proper CDF by clamping and isotonic regression, and
projects the resulting discrete measure onto log-concave densities.
Pointwise confidence intervals for densities, derivatives, differences and
log ratios use knot-standardised pivots.
"""
__version__ = "0.1.0"

from .data import IsoGrid, ObservedSample, default_grid, load_csv
from .exceptions import ConvergenceError, DataError, DrlogconError, UsageError
from .isotonic import CDFState, SteppedCDF, clamp01, eval_step, isotonize, pava, wasserstein1
from .logconcave import (OUTSIDE_SUPPORT, LogConcaveFit, WeightedAtoms, adjacent_knots,
                         atoms_from_cdf, cdf, density, knots, left_derivative, log_density,
                         logconcave_mle, quantile)
from .nuisance import (ConditionalCDFModel, LocationScaleCDF, NuisancePair, PropensityModel,
                       fit_location_scale, fit_logistic_propensity, oracle_nuisance)
from .onestep import (FoldAssignment, crossfit_cdf, estimate_density, estimate_density_crossfit,
                      make_folds, onestep_cdf)
from .convexreg import ConvexFit, convex_knots_around, convex_lse
from .inference import (ChiEstimate, PivotTable, PointwiseCI, band_order_statistics,
                        crossfit_chi, difference_ci, estimate_chi, log_ratio_ci, pointwise_ci,
                        simulate_pivots)
from .kernels import BACKEND

__all__ = [name for name in dir() if not name.startswith("_")]
