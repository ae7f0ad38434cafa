"""Doubly-robust one-step CDF estimator and the full density pipeline.

The one-step estimate at ``s`` is the sample mean of the influence values

    D(s) = I(A = a) / pi(X) * (I(Y <= s) - phi(s | X)) + phi(s | X).

Sums over rows always run along a contiguous axis so that numpy's pairwise
summation fixes the rounding, which makes pooled and cross-fitted
estimates with identical nuisances agree bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import IsoGrid, ObservedSample, default_grid
from .exceptions import DataError
from .isotonic import CDFState, SteppedCDF, clamp01, isotonize
from .logconcave import LogConcaveFit, atoms_from_cdf, logconcave_mle
from .nuisance import NuisancePair

CHUNK_ELEMENTS = 1 << 21   # about 16 MB of float64 per block

NuisanceFactory = Callable[[ObservedSample], NuisancePair]


# ---------------------------------------------------------------------------
# folds


@dataclass(frozen=True)
class FoldAssignment:
    """Fold label in ``0..K-1`` for every row."""

    k: int
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if self.k < 2:
            raise DataError("need at least two folds")
        if labels.ndim != 1 or labels.min() < 0 or labels.max() >= self.k:
            raise DataError("fold labels out of range")
        sizes = np.bincount(labels, minlength=self.k)
        if sizes.min() == 0 or sizes.max() - sizes.min() > 1:
            raise DataError("fold sizes must differ by at most one")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.labels == fold)


def make_folds(n: int, k: int, seed: int = 0) -> FoldAssignment:
    """Seeded shuffle with round-robin labels, so fold sizes differ by at most one."""
    if not 2 <= k <= n:
        raise DataError(f"fold count must lie in [2, n]; got {k}")
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=np.int64)
    labels[perm] = np.arange(n) % k
    return FoldAssignment(k, labels)


# ---------------------------------------------------------------------------
# influence values


class _RowNuisances:
    """Per-row nuisance evaluation, either pooled or fold by fold."""

    def __init__(self, sample: ObservedSample, parts):
        # parts: list of (row_index or None, NuisancePair)
        self.sample = sample
        self.parts = parts
        n = sample.n
        pi = np.empty(n)
        for rows, nuis in parts:
            xr = sample.x if rows is None else sample.x[rows]
            vals = nuis.propensity.predict(xr)
            if rows is None:
                pi[:] = vals
            else:
                pi[rows] = vals
        eps = min(nuis.propensity.eps for _, nuis in parts)
        if np.any(pi < eps):
            raise DataError("propensity model returned a value below its truncation bound")
        self.pi = pi

    def phi_t(self, s: np.ndarray) -> np.ndarray:
        """``phi(s_j | X_i)`` as a C-contiguous ``(len(s), n)`` array."""
        out = np.empty((s.size, self.sample.n))
        for rows, nuis in self.parts:
            xr = self.sample.x if rows is None else self.sample.x[rows]
            vals = nuis.cdf_model.evaluate(s, xr).T
            if rows is None:
                out[:] = vals
            else:
                out[:, rows] = vals
        return out


def _influence_block(rn: _RowNuisances, arm: int, s: np.ndarray) -> np.ndarray:
    sample = rn.sample
    w = (sample.a == arm) / rn.pi
    phi = rn.phi_t(s)
    ind = (sample.y[None, :] <= s[:, None]).astype(np.float64)
    return w[None, :] * (ind - phi) + phi


def _column_means(rn: _RowNuisances, arm: int, points: np.ndarray) -> np.ndarray:
    n = rn.sample.n
    chunk = max(1, CHUNK_ELEMENTS // n)
    out = np.empty(points.size)
    for start in range(0, points.size, chunk):
        block = _influence_block(rn, arm, points[start:start + chunk])
        out[start:start + chunk] = block.sum(axis=1) / n
    return out


def influence_values(sample: ObservedSample, arm: int, nuisances: NuisancePair,
                     points) -> np.ndarray:
    """Influence values ``D(s_j)(Z_i)`` as a ``(len(points), n)`` array."""
    rn = _RowNuisances(sample, [(None, nuisances)])
    return _influence_block(rn, arm, np.atleast_1d(np.asarray(points, dtype=np.float64)))


def _fold_nuisances(sample: ObservedSample, arm: int, factory: NuisanceFactory,
                    folds: FoldAssignment) -> _RowNuisances:
    if folds.labels.shape[0] != sample.n:
        raise DataError("fold assignment does not match the sample size")
    parts = []
    for k in range(folds.k):
        train = np.flatnonzero(folds.labels != k)
        tr = sample.subset(train)
        if not tr.arm_mask(arm).any() or tr.arm_mask(arm).all():
            raise DataError(f"training complement of fold {k} lacks a treatment arm")
        parts.append((folds.rows(k), factory(tr)))
    return _RowNuisances(sample, parts)


# ---------------------------------------------------------------------------
# estimators


def onestep_cdf(sample: ObservedSample, arm: int, nuisances: NuisancePair,
                grid: IsoGrid) -> SteppedCDF:
    """Raw one-step CDF estimate at every grid point (may leave [0, 1])."""
    rn = _RowNuisances(sample, [(None, nuisances)])
    return SteppedCDF(grid, _column_means(rn, arm, grid.points), CDFState.RAW)


def crossfit_cdf(sample: ObservedSample, arm: int, nuisance_factory: NuisanceFactory,
                 folds: FoldAssignment, grid: IsoGrid) -> SteppedCDF:
    """Cross-fitted one-step CDF.

    Nuisances for fold ``k`` are fitted on the other folds and evaluated on
    fold ``k``. The influence values of all folds are averaged together
    over the ``n`` rows, which equals the average of per-fold means when
    folds have equal size.
    """
    rn = _fold_nuisances(sample, arm, nuisance_factory, folds)
    return SteppedCDF(grid, _column_means(rn, arm, grid.points), CDFState.RAW)


def correct_cdf(raw: SteppedCDF) -> SteppedCDF:
    """Clamp to [0, 1] and apply the isotonic projection."""
    return isotonize(clamp01(raw))


def _fit_from_raw(raw: SteppedCDF, tol: float) -> LogConcaveFit:
    corrected = correct_cdf(raw)
    fit = logconcave_mle(atoms_from_cdf(corrected), tol=tol)
    fit.meta.update(raw_cdf=raw, corrected_cdf=corrected, grid=raw.grid)
    return fit


def estimate_density(sample: ObservedSample, arm: int, nuisances: NuisancePair,
                     grid: IsoGrid | None = None, tol: float = 1e-8) -> LogConcaveFit:
    """Doubly-robust log-concave density estimate for arm ``arm``.

    Runs the one-step CDF, clamping, isotonic correction, conversion to
    weighted atoms and the log-concave projection. The raw and corrected
    CDFs are attached to ``fit.meta``.
    """
    if grid is None:
        grid = default_grid(sample, arm)
    return _fit_from_raw(onestep_cdf(sample, arm, nuisances, grid), tol)


def estimate_density_crossfit(sample: ObservedSample, arm: int,
                              nuisance_factory: NuisanceFactory, k: int = 5,
                              grid: IsoGrid | None = None, seed: int = 0,
                              folds: FoldAssignment | None = None,
                              tol: float = 1e-8) -> LogConcaveFit:
    """Cross-fitted variant of :func:`estimate_density` on a pooled grid."""
    if grid is None:
        grid = default_grid(sample, arm)
    if folds is None:
        folds = make_folds(sample.n, k, seed)
    fit = _fit_from_raw(crossfit_cdf(sample, arm, nuisance_factory, folds, grid), tol)
    fit.meta["folds"] = folds
    return fit
