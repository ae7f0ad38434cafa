"""Observed data, estimation grids and CSV ingestion."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import DataError

GRID_RTOL = 1e-12
MIN_GRID_POINTS = 4


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ObservedSample:
    """Rows ``(X, A, Y)`` of an observational study with a binary treatment.

    Parameters
    ----------
    x : ndarray, shape (n, d)
        Covariates.
    a : ndarray, shape (n,)
        Treatment indicators in {0, 1}.
    y : ndarray, shape (n,)
        Outcomes.
    """

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        a = np.asarray(self.a)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 2 or a.ndim != 1 or y.ndim != 1:
            raise DataError("x must be 2-D and a, y 1-D")
        n = y.shape[0]
        if x.shape[0] != n or a.shape[0] != n:
            raise DataError(f"row counts differ: x={x.shape[0]}, a={a.shape[0]}, y={n}")
        if n < 2:
            raise DataError("need at least 2 rows")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataError("non-finite entries in x or y")
        a_float = np.asarray(a, dtype=np.float64)
        if not np.all(np.isfinite(a_float)) or not np.all((a_float == 0) | (a_float == 1)):
            raise DataError("non-binary treatment")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "a", _frozen(a_float.astype(np.int8)))
        object.__setattr__(self, "y", _frozen(y))

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def d(self) -> int:
        return int(self.x.shape[1])

    def arm_mask(self, arm: int) -> np.ndarray:
        return self.a == arm

    def subset(self, rows) -> "ObservedSample":
        """Return the sample restricted to ``rows`` (index array or mask)."""
        return ObservedSample(self.x[rows], self.a[rows], self.y[rows])


@dataclass(frozen=True)
class IsoGrid:
    """Equally spaced grid ``s_1 < ... < s_m`` used by the monotone correction."""

    points: np.ndarray
    delta: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 1 or pts.shape[0] < MIN_GRID_POINTS:
            raise DataError(f"grid needs at least {MIN_GRID_POINTS} points")
        if not self.delta > 0:
            raise DataError("grid spacing must be positive")
        gaps = np.diff(pts)
        scale = max(abs(self.delta), np.max(np.abs(pts)))
        if np.max(np.abs(gaps - self.delta)) > GRID_RTOL * scale:
            raise DataError("grid is not equally spaced")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def lower(self) -> float:
        return float(self.points[0])

    @property
    def upper(self) -> float:
        return float(self.points[-1])

    @property
    def m(self) -> int:
        return int(self.points.shape[0])

    @classmethod
    def from_bounds(cls, lower: float, delta: float, upper: float) -> "IsoGrid":
        """Grid ``lower + j*delta`` for ``j = 0, 1, ...`` with the last point pinned to ``upper``."""
        count = int(round((upper - lower) / delta))
        pts = lower + np.arange(count + 1) * delta
        pts[-1] = upper
        return cls(pts, delta)


def default_grid(sample: ObservedSample, arm: int, n_grid: int | None = None) -> IsoGrid:
    """Recommended grid for treatment arm ``arm``.

    The spacing is ``(max - min) / n`` over the arm's outcomes, where ``n``
    is the total sample size (or ``n_grid`` when given). The grid starts one
    step below the arm minimum and ends exactly at the arm maximum, giving
    ``n + 2`` points.
    """
    ya = sample.y[sample.arm_mask(arm)]
    if ya.size == 0:
        raise DataError(f"arm {arm} is empty")
    lo, hi = float(ya.min()), float(ya.max())
    if hi <= lo:
        raise DataError("degenerate grid: all arm outcomes identical")
    n = sample.n if n_grid is None else int(n_grid)
    if n < 2:
        raise DataError("grid size must be at least 2")
    delta = (hi - lo) / n
    lower = lo - delta
    pts = lower + np.arange(n + 2) * delta
    pts[-1] = hi
    return IsoGrid(pts, delta)


def load_csv(path, covariate_columns: Sequence[str], treatment_column: str,
             outcome_column: str, delimiter: str = ",") -> ObservedSample:
    """Read an :class:`ObservedSample` from a delimited text file with a header row."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        wanted = list(covariate_columns) + [treatment_column, outcome_column]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")
        idx = [header.index(c) for c in wanted]
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                rows.append([float(rec[i]) for i in idx])
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: non-numeric or missing cell") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    arr = np.array(rows, dtype=np.float64)
    d = len(covariate_columns)
    a = arr[:, d]
    if not np.all((a == 0) | (a == 1)):
        raise DataError(f"{path}: non-binary treatment")
    return ObservedSample(arr[:, :d].reshape(len(rows), d), a, arr[:, d + 1])
