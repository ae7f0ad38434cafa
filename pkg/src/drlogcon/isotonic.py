"""Clamping, isotonic projection and step-function evaluation of CDF estimates.

These operations turn the raw one-step CDF values on the grid into a
proper distribution function: values are clamped to [0, 1], the interior
is projected onto non-decreasing sequences by PAVA, and the endpoints are
pinned to 0 and 1.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from . import kernels
from ._quad import piecewise_integral
from .data import IsoGrid
from .exceptions import DataError


class CDFState(str, Enum):
    RAW = "raw"
    CLAMPED = "clamped"
    ISOTONIZED = "isotonized"


@dataclass(frozen=True)
class SteppedCDF:
    """CDF values on the points of an :class:`IsoGrid`.

    Parameters
    ----------
    grid : IsoGrid
    values : ndarray, shape (m,)
        One value per grid point.
    state : CDFState
        Stage of the correction pipeline the values belong to.
    """

    grid: IsoGrid
    values: np.ndarray
    state: CDFState = CDFState.RAW

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.shape != (self.grid.m,):
            raise DataError(f"expected {self.grid.m} values, got shape {vals.shape}")
        state = CDFState(self.state)
        if state is not CDFState.RAW and (vals.min() < 0.0 or vals.max() > 1.0):
            raise DataError(f"{state.value} CDF must lie in [0, 1]")
        if state is CDFState.ISOTONIZED:
            if vals[0] != 0.0 or vals[-1] != 1.0 or np.any(np.diff(vals[1:-1]) < 0):
                raise DataError("isotonized CDF must be monotone with pinned endpoints")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "state", state)

    def __call__(self, s):
        return eval_step(self, s)


def clamp01(cdf: SteppedCDF) -> SteppedCDF:
    """Clamp raw values elementwise to [0, 1]."""
    if cdf.state is not CDFState.RAW:
        raise DataError("clamp01 expects a raw CDF")
    return SteppedCDF(cdf.grid, np.clip(cdf.values, 0.0, 1.0), CDFState.CLAMPED)


def pava(v) -> np.ndarray:
    """Least-squares projection of ``v`` onto non-decreasing vectors.

    Uses the linear-time pool-adjacent-violators algorithm with unit
    weights.

    Examples
    --------
    >>> pava([0.2, 0.5, 0.3, 0.4])
    array([0.2, 0.4, 0.4, 0.4])
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DataError("pava expects a non-empty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise DataError("pava input must be finite")
    return kernels.pava(v)


def isotonize(cdf: SteppedCDF) -> SteppedCDF:
    """Project the clamped interior values with PAVA and pin the endpoints to 0 and 1."""
    if cdf.state is not CDFState.CLAMPED:
        raise DataError("isotonize expects a clamped CDF")
    out = np.empty(cdf.grid.m)
    out[0] = 0.0
    out[-1] = 1.0
    out[1:-1] = pava(cdf.values[1:-1])
    return SteppedCDF(cdf.grid, out, CDFState.ISOTONIZED)


def eval_step(cdf: SteppedCDF, s):
    """Right-continuous piecewise-constant extension of an isotonized CDF.

    Returns 0 below ``s_2``, the value at the largest grid point not above
    ``s`` on ``[s_2, U)``, and 1 from the upper bound on.
    """
    if cdf.state is not CDFState.ISOTONIZED:
        raise DataError("eval_step expects an isotonized CDF")
    pts = cdf.grid.points
    s_arr = np.asarray(s, dtype=np.float64)
    idx = np.searchsorted(pts, s_arr, side="right") - 1
    out = cdf.values[np.clip(idx, 0, pts.size - 1)]
    out = np.where(idx < 1, 0.0, out)
    out = np.where(s_arr >= pts[-1], 1.0, out)
    return float(out) if out.ndim == 0 else out


def wasserstein1(F: SteppedCDF, G: Callable, bounds=None, atol: float = 1e-6,
                 breakpoints=None) -> float:
    """Wasserstein-1 distance ``int |F(s) - G(s)| ds`` over ``bounds``.

    The integral is split at the jump points of ``F`` (and any extra
    ``breakpoints`` of ``G``) and each piece is integrated by adaptive
    Gauss-Legendre quadrature. ``G`` must accept an array of points.
    """
    pts = F.grid.points
    if bounds is None:
        bounds = (pts[0], pts[-1])
    lo, hi = float(bounds[0]), float(bounds[1])
    if not hi > lo:
        raise DataError("bounds must be an increasing interval")
    breaks = [lo, hi]
    inside = pts[(pts > lo) & (pts < hi)]
    breaks = np.concatenate((breaks, inside))
    if breakpoints is not None:
        extra = np.asarray(breakpoints, dtype=np.float64)
        breaks = np.concatenate((breaks, extra[(extra > lo) & (extra < hi)]))

    def integrand(s):
        return np.abs(eval_step(F, s) - np.asarray(G(s), dtype=np.float64))

    try:
        return piecewise_integral(integrand, breaks, atol=atol)
    except ValueError as exc:
        raise DataError(str(exc)) from None
