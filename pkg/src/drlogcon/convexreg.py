"""One-dimensional convex least-squares regression."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .exceptions import ConvergenceError, DataError

SLOPE_TOL = 1e-8   # same knot tolerance as the log-concave module


@dataclass(frozen=True)
class ConvexFit:
    """Convex least-squares fit on a strictly increasing design.

    Parameters
    ----------
    x : ndarray
        Design points.
    fitted : ndarray
        Fitted values at the design points.
    iterations : int
        Support-reduction steps used by the solver.
    """

    x: np.ndarray
    fitted: np.ndarray
    iterations: int = 0

    @property
    def knots(self) -> np.ndarray:
        """Design points where the slope increases by more than ``1e-8``, plus both endpoints."""
        slopes = np.diff(self.fitted) / np.diff(self.x)
        kink = np.diff(slopes) > SLOPE_TOL
        mask = np.concatenate(([True], kink, [True]))
        return self.x[mask]

    def value(self, x0: float) -> float:
        """Piecewise-linear interpolation of the fit."""
        return float(np.interp(x0, self.x, self.fitted))

    def left_derivative(self, x0: float) -> float:
        """Slope of the segment ending at (or containing) ``x0``."""
        if not self.x[0] < x0 <= self.x[-1]:
            raise DataError("left derivative needs x_1 < x0 <= x_n")
        i = int(np.searchsorted(self.x, x0, side="left"))
        return float((self.fitted[i] - self.fitted[i - 1]) / (self.x[i] - self.x[i - 1]))


def convex_lse(x, y, tol: float = 1e-10, max_iter: int = 10000) -> ConvexFit:
    """Least-squares projection of ``y`` onto convex functions of ``x``.

    Solved exactly by support reduction over hinge functions
    ``(x - x_j)_+``: each step adds the hinge with the most negative
    normalised directional derivative, refits the spline on the active
    set, and removes knots whose kinks turn negative. The loop stops when
    no directional derivative is below ``-tol * max(1, ||y||)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise DataError("x and y must be 1-D of equal length")
    if x.size < 3:
        raise DataError("convex regression needs at least 3 points")
    if np.any(np.diff(x) <= 0):
        raise DataError("design points must be strictly increasing")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DataError("non-finite input")
    try:
        fitted, _, iters = kernels.convex_lse_solve(x, y, tol, max_iter)
    except kernels.KernelConvergenceError as exc:
        raise ConvergenceError(str(exc)) from None
    return ConvexFit(x, fitted, iters)


def convex_knots_around(fit: ConvexFit, x0: float) -> tuple[float, float]:
    """Nearest knots strictly to the left and right of ``x0``."""
    if not fit.x[0] < x0 < fit.x[-1]:
        raise DataError(f"x0={x0} outside the design range")
    kt = fit.knots
    return float(kt[kt < x0][-1]), float(kt[kt > x0][0])
