"""Weighted log-concave maximum likelihood and queries on the fitted density.

The fitted log-density is piecewise linear between atom locations and
``-inf`` outside the atom range. All integrals over segments are done in
closed form.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import kernels
from .exceptions import ConvergenceError, DataError
from .isotonic import CDFState, SteppedCDF

SLOPE_TOL = 1e-8
WEIGHT_FLOOR = 1e-12
WEIGHT_SUM_TOL = 1e-10
KNOT_MATCH_TOL = 1e-12


class _OutsideSupport:
    """Sentinel for the log-density outside the support (``-inf``)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __float__(self):
        return -math.inf

    def __repr__(self):
        return "OUTSIDE_SUPPORT"


OUTSIDE_SUPPORT = _OutsideSupport()


@dataclass(frozen=True)
class WeightedAtoms:
    """Discrete probability measure with at least two atoms."""

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        t = np.array(self.locations, dtype=np.float64)
        w = np.array(self.weights, dtype=np.float64)
        if t.ndim != 1 or t.shape != w.shape:
            raise DataError("locations and weights must be 1-D of equal length")
        if t.size < 2:
            raise DataError("point mass: need at least two atoms")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(w))):
            raise DataError("atoms must be finite")
        if np.any(np.diff(t) <= 0):
            raise DataError("atom locations must be strictly increasing")
        if np.any(w <= 0):
            raise DataError("atom weights must be positive")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise DataError(f"atom weights sum to {w.sum()!r}, not 1")
        t.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "locations", t)
        object.__setattr__(self, "weights", w)

    @property
    def m(self) -> int:
        return int(self.locations.size)


def atoms_from_cdf(cdf: SteppedCDF) -> WeightedAtoms:
    """Atoms ``s_2, ..., s_m`` weighted by the increments of a corrected CDF.

    Increments below ``1e-12`` are dropped and the rest renormalised.
    """
    if cdf.state is not CDFState.ISOTONIZED:
        raise DataError("atoms_from_cdf expects an isotonized CDF")
    w = np.diff(cdf.values)
    t = cdf.grid.points[1:]
    keep = w >= WEIGHT_FLOOR
    if keep.sum() < 2:
        raise DataError("point mass: corrected CDF has fewer than two atoms")
    w = w[keep]
    return WeightedAtoms(t[keep], w / w.sum())


# ---------------------------------------------------------------------------
# fitted density


@dataclass(frozen=True)
class LogConcaveFit:
    """Piecewise-linear concave log-density on the atoms of a weighted measure.

    Parameters
    ----------
    atoms : WeightedAtoms
        The measure that was projected.
    phi : ndarray, shape (m,)
        Log-density at every atom location.
    iterations : int
        Active-set steps taken by the solver.
    meta : dict
        Free-form metadata (for example the corrected CDF of the pipeline).
    """

    atoms: WeightedAtoms
    phi: np.ndarray
    iterations: int = 0
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        phi = np.array(self.phi, dtype=np.float64)
        if phi.shape != self.atoms.locations.shape:
            raise DataError("phi must have one value per atom")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        t = self.atoms.locations
        slopes = np.diff(phi) / np.diff(t)
        kink = slopes[:-1] - slopes[1:]
        is_knot = np.concatenate(([True], kink > SLOPE_TOL, [True]))
        kt = t[is_knot]
        kp = phi[is_knot]
        for arr in (kt, kp):
            arr.setflags(write=False)
        object.__setattr__(self, "_knot_t", kt)
        object.__setattr__(self, "_knot_phi", kp)
        object.__setattr__(self, "_slopes", np.diff(kp) / np.diff(kt))
        masses = np.diff(kt) * kernels.jfuncs(kp[:-1], kp[1:])[0]
        object.__setattr__(self, "_cum_mass", np.concatenate(([0.0], np.cumsum(masses))))

    # ----- basic properties -------------------------------------------------
    @property
    def support(self) -> tuple[float, float]:
        t = self.atoms.locations
        return float(t[0]), float(t[-1])

    @property
    def knot_locations(self) -> np.ndarray:
        return self._knot_t

    @property
    def knot_phi(self) -> np.ndarray:
        return self._knot_phi

    @property
    def segment_slopes(self) -> np.ndarray:
        """Slope of the log-density on each segment between knots."""
        return self._slopes

    @property
    def left_slopes(self) -> np.ndarray:
        """Left slope at each knot (``nan`` at the left endpoint)."""
        return np.concatenate(([np.nan], self._slopes))

    @property
    def right_slopes(self) -> np.ndarray:
        """Right slope at each knot (``nan`` at the right endpoint)."""
        return np.concatenate((self._slopes, [np.nan]))

    @property
    def total_mass(self) -> float:
        return float(self._cum_mass[-1])

    def objective(self) -> float:
        """``sum_i w_i phi(t_i) - int exp(phi)``."""
        return float(self.atoms.weights @ self.phi) - self.total_mass

    # ----- serialisation ------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return {
            "atoms": self.atoms.locations.tolist(),
            "weights": self.atoms.weights.tolist(),
            "phi": self.phi.tolist(),
            "knots": self.knot_locations.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "LogConcaveFit":
        try:
            atoms = WeightedAtoms(obj["atoms"], obj["weights"])
            return cls(atoms, obj["phi"])
        except KeyError as exc:
            raise DataError(f"fit JSON lacks field {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "LogConcaveFit":
        return cls.from_dict(json.loads(text))

    # ----- internals ------------------------------------------------------------
    def _segment(self, s: np.ndarray) -> np.ndarray:
        seg = np.searchsorted(self._knot_t, s, side="right") - 1
        return np.clip(seg, 0, self._knot_t.size - 2)

    def _phi_inside(self, s: np.ndarray) -> np.ndarray:
        seg = self._segment(s)
        return self._knot_phi[seg] + self._slopes[seg] * (s - self._knot_t[seg])


def logconcave_mle(atoms: WeightedAtoms, tol: float = 1e-8,
                   max_iter: int = 1000) -> LogConcaveFit:
    """Log-concave maximum-likelihood projection of a weighted discrete measure.

    Maximises ``sum_i w_i phi(t_i) - int exp(phi)`` over concave ``phi`` by
    an active-set method on the atom locations: Newton steps on the current
    knot set alternate with insertion of the knot with the largest
    directional derivative and removal of knots whose kinks become convex.

    Parameters
    ----------
    atoms : WeightedAtoms
    tol : float
        Stop when every directional derivative is at most ``tol``.
    max_iter : int
        Cap on active-set steps.

    Returns
    -------
    LogConcaveFit
        The fit, renormalised to integrate to one.
    """
    try:
        phi, _, iters = kernels.logconcave_solve(atoms.locations, atoms.weights,
                                                 tol, max_iter)
    except kernels.KernelConvergenceError as exc:
        raise ConvergenceError(str(exc)) from None
    fit = LogConcaveFit(atoms, phi, iters)
    # remove the residual Newton error from the normalisation
    return LogConcaveFit(atoms, phi - math.log(fit.total_mass), iters)


# ---------------------------------------------------------------------------
# queries


def _as_array(s):
    arr = np.asarray(s, dtype=np.float64)
    return arr, arr.ndim == 0


def density(fit: LogConcaveFit, s):
    """Fitted density, zero outside the support."""
    arr, scalar = _as_array(s)
    lo, hi = fit.support
    inside = (arr >= lo) & (arr <= hi)
    out = np.where(inside, np.exp(fit._phi_inside(np.clip(arr, lo, hi))), 0.0)
    return float(out) if scalar else out


def log_density(fit: LogConcaveFit, s):
    """Fitted log-density at a scalar ``s``; :data:`OUTSIDE_SUPPORT` off the support."""
    arr, scalar = _as_array(s)
    if not scalar:
        raise DataError("log_density takes a scalar; use log_density_array for vectors")
    lo, hi = fit.support
    if not lo <= arr <= hi:
        return OUTSIDE_SUPPORT
    return float(fit._phi_inside(arr))


def log_density_array(fit: LogConcaveFit, s) -> tuple[np.ndarray, np.ndarray]:
    """Vector log-density: returns ``(values, inside)``; values off the support are meaningless."""
    arr = np.atleast_1d(np.asarray(s, dtype=np.float64))
    lo, hi = fit.support
    inside = (arr >= lo) & (arr <= hi)
    return fit._phi_inside(np.clip(arr, lo, hi)), inside


def left_derivative(fit: LogConcaveFit, s):
    """Left derivative of the density, ``p(s) * phi'(s-)``; undefined at or below ``t_1``."""
    arr, scalar = _as_array(s)
    lo, hi = fit.support
    if np.any(arr <= lo):
        raise DataError("left derivative undefined at or below the support start")
    kt = fit._knot_t
    seg = np.clip(np.searchsorted(kt, arr, side="left") - 1, 0, kt.size - 2)
    val = fit._knot_phi[seg] + fit._slopes[seg] * (np.minimum(arr, hi) - kt[seg])
    out = np.where(arr <= hi, np.exp(val) * fit._slopes[seg], 0.0)
    return float(out) if scalar else out


def cdf(fit: LogConcaveFit, s):
    """Fitted distribution function by closed-form segment integrals."""
    arr, scalar = _as_array(s)
    lo, hi = fit.support
    c = np.clip(arr, lo, hi)
    seg = fit._segment(c)
    t0 = fit._knot_t[seg]
    p0 = fit._knot_phi[seg]
    pc = fit._phi_inside(c)
    partial = (c - t0) * kernels.jfuncs(p0, pc)[0]
    out = np.clip(fit._cum_mass[seg] + partial, 0.0, 1.0)
    out = np.where(arr >= hi, 1.0, np.where(arr <= lo, 0.0, out))
    return float(out) if scalar else out


def quantile(fit: LogConcaveFit, u):
    """Inverse of :func:`cdf` for ``u`` in (0, 1), inverted segment-wise in closed form."""
    arr, scalar = _as_array(u)
    if np.any((arr <= 0.0) | (arr >= 1.0)):
        raise DataError("quantile levels must lie in (0, 1)")
    cm = fit._cum_mass
    seg = np.clip(np.searchsorted(cm, arr, side="right") - 1, 0, cm.size - 2)
    kt = fit._knot_t
    rem = arr - cm[seg]
    base = np.exp(-fit._knot_phi[seg])
    b = fit._slopes[seg]
    z = b * rem * base
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(b == 0.0, rem * base, np.log1p(np.maximum(z, -1.0)) / b)
    step = np.where(np.isfinite(step), step, kt[seg + 1] - kt[seg])
    out = np.clip(kt[seg] + step, kt[seg], kt[seg + 1])
    return float(out) if scalar else out


def knots(fit: LogConcaveFit) -> np.ndarray:
    """Slope-change points of the log-density plus both support endpoints."""
    return fit.knot_locations.copy()


def adjacent_knots(fit: LogConcaveFit, s0: float) -> tuple[float, float]:
    """Nearest knots strictly below and strictly above ``s0``.

    When ``s0`` sits on a knot (to within ``1e-12``) the neighbours on each
    side of that knot are returned.
    """
    lo, hi = fit.support
    if not lo < s0 < hi:
        raise DataError(f"s0={s0} is not inside the open support ({lo}, {hi})")
    kt = fit.knot_locations
    below = kt[kt < s0 - KNOT_MATCH_TOL]
    above = kt[kt > s0 + KNOT_MATCH_TOL]
    return float(below[-1]), float(above[0])


__all__ = ["OUTSIDE_SUPPORT", "WeightedAtoms", "LogConcaveFit", "atoms_from_cdf",
           "logconcave_mle", "density", "log_density", "log_density_array",
           "left_derivative", "cdf", "quantile", "knots", "adjacent_knots"]
