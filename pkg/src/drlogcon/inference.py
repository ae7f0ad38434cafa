"""Pointwise inference for counterfactual log-concave densities.

Intervals are standardised by the distance between the knots adjacent to
the evaluation point, so the limiting pivots are free of curvature
constants. Their quantiles are approximated by Monte Carlo with a convex
regression proxy (:func:`simulate_pivots`).
"""
from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field
from functools import partial
from importlib import resources
from pathlib import Path

import numpy as np

from ._parallel import ordered_map
from .convexreg import convex_knots_around, convex_lse
from .data import ObservedSample
from .exceptions import DataError
from .logconcave import LogConcaveFit, adjacent_knots, density, left_derivative, quantile
from .nuisance import NuisancePair
from .onestep import FoldAssignment, NuisanceFactory, _fold_nuisances, _influence_block, _RowNuisances

PIVOTS_ENV = "DRLOGCON_PIVOTS"
DEFAULT_PIVOT_FILE = "pivots_k2.csv"
SUPPORTED_K = (2,)
X0 = 0.5


class DegenerateIntervalWarning(UserWarning):
    """Issued when an interval collapses because the scale estimate is zero."""


# ---------------------------------------------------------------------------
# chi


@dataclass(frozen=True)
class ChiEstimate:
    """Difference-quotient estimate of the variance scale at ``s0``."""

    value: float
    h: float
    arm: int
    s0: float

    def __post_init__(self):
        if not self.value >= 0.0:
            raise DataError("chi estimate must be non-negative")
        if not self.h > 0.0:
            raise DataError("bandwidth must be positive")


def default_bandwidth(n: int, b: float = 0.1) -> float:
    """``h = n ** (-b)``; the default exponent is 1/10."""
    return float(n) ** (-b)


def _chi_from_rows(rn: _RowNuisances, arm: int, s0: float, h: float) -> float:
    n = rn.sample.n
    d = _influence_block(rn, arm, np.array([s0 - h, s0, s0 + h]))
    up = d[2] - d[1]
    down = d[0] - d[1]
    return float(((up * up).sum() / n + (down * down).sum() / n) / (2.0 * h))


def estimate_chi(sample: ObservedSample, arm: int, nuisances: NuisancePair,
                 s0: float, h: float | None = None) -> ChiEstimate:
    """Estimate the scale factor from influence-value differences at ``s0 +/- h``.

    ``chi = [mean (D(s0+h) - D(s0))^2 + mean (D(s0-h) - D(s0))^2] / (2h)``
    with ``h = n ** (-1/10)`` by default.
    """
    h = default_bandwidth(sample.n) if h is None else float(h)
    if not h > 0:
        raise DataError("bandwidth must be positive")
    rn = _RowNuisances(sample, [(None, nuisances)])
    return ChiEstimate(_chi_from_rows(rn, arm, float(s0), h), h, arm, float(s0))


def crossfit_chi(sample: ObservedSample, arm: int, nuisance_factory: NuisanceFactory,
                 folds: FoldAssignment, s0: float, h: float | None = None) -> ChiEstimate:
    """Cross-fitted :func:`estimate_chi` with out-of-fold nuisances."""
    h = default_bandwidth(sample.n) if h is None else float(h)
    if not h > 0:
        raise DataError("bandwidth must be positive")
    rn = _fold_nuisances(sample, arm, nuisance_factory, folds)
    return ChiEstimate(_chi_from_rows(rn, arm, float(s0), h), h, arm, float(s0))


# ---------------------------------------------------------------------------
# pivots


@dataclass(frozen=True)
class PivotTable:
    """Monte-Carlo draws of the value pivot ``L0`` and slope pivot ``L1``."""

    draws0: np.ndarray
    draws1: np.ndarray
    k: int = 2
    n_sim: int = 0
    B: int = 0
    seed: int = 0
    comments: tuple = field(default=(), compare=False)

    def __post_init__(self):
        d0 = np.asarray(self.draws0, dtype=np.float64)
        d1 = np.asarray(self.draws1, dtype=np.float64)
        if d0.ndim != 1 or d0.shape != d1.shape or d0.size < 2:
            raise DataError("pivot draws must be equal-length vectors")
        object.__setattr__(self, "draws0", d0)
        object.__setattr__(self, "draws1", d1)

    def c_alpha(self, alpha: float, which: int = 0) -> float:
        """Empirical ``1 - alpha`` quantile of ``|L0|`` (``which=0``) or ``|L1|``."""
        if not 0.0 < alpha < 1.0:
            raise DataError("alpha must lie in (0, 1)")
        draws = self.draws0 if which == 0 else self.draws1
        return float(np.quantile(np.abs(draws), 1.0 - alpha))

    def halves(self) -> tuple[np.ndarray, np.ndarray]:
        """Disjoint first and second halves of the ``L0`` draws."""
        half = self.draws0.size // 2
        return self.draws0[:half], self.draws0[half:2 * half]

    def first_half(self) -> "PivotTable":
        half = self.draws0.size // 2
        return PivotTable(self.draws0[:half], self.draws1[:half], self.k,
                          self.n_sim, half, self.seed)

    # ----- file format --------------------------------------------------------
    def save(self, path) -> None:
        path = Path(path)
        lines = [f"# {c}" for c in self.comments]
        lines.append("k,n_sim,B,seed")
        lines.append(f"{self.k},{self.n_sim},{self.draws0.size},{self.seed}")
        lines.append("L0,L1")
        lines.extend(f"{a!r},{b!r}" for a, b in zip(self.draws0.tolist(), self.draws1.tolist()))
        path.write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "PivotTable":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise DataError(f"cannot read pivot table {path}: {exc}") from None
        comments = []
        body = []
        for line in text.splitlines():
            if line.startswith("#"):
                comments.append(line[1:].strip())
            elif line.strip():
                body.append(line.strip())
        try:
            if body[0] != "k,n_sim,B,seed" or body[2] != "L0,L1":
                raise ValueError
            k, n_sim, b, seed = (int(v) for v in body[1].split(","))
            arr = np.array([[float(v) for v in ln.split(",")] for ln in body[3:]])
        except (ValueError, IndexError):
            raise DataError(f"{path}: malformed pivot table") from None
        if arr.shape != (b, 2):
            raise DataError(f"{path}: expected {b} draws, found {arr.shape[0]}")
        return cls(arr[:, 0], arr[:, 1], k, n_sim, b, seed, tuple(comments))


def default_pivot_path() -> Path:
    """Pivot table path: the environment override, else the shipped file."""
    env = os.environ.get(PIVOTS_ENV)
    if env:
        return Path(env)
    return Path(str(resources.files("drlogcon") / "data" / DEFAULT_PIVOT_FILE))


def default_pivot_table() -> PivotTable:
    return PivotTable.load(default_pivot_path())


def _pivot_rep(r: int, n_sim: int, seed: int, flip: bool = False) -> tuple[float, float]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
    x = np.arange(1, n_sim + 1) / n_sim
    eps = rng.standard_normal(n_sim)
    if flip:
        # reflect the design about 1/2 and negate the noise
        eps = -eps[::-1]
    y = 12.0 * (x - X0) ** 2 + eps
    try:
        fit = convex_lse(x, y)
    except Exception as exc:  # noqa: BLE001 - report which replication failed
        raise RuntimeError(f"pivot replication {r} failed: {exc}") from exc
    lo, hi = convex_knots_around(fit, X0)
    dtau = hi - lo
    l0 = math.sqrt(n_sim * dtau) * (fit.value(X0) - 0.0)
    l1 = math.sqrt(n_sim * dtau ** 3) * (fit.left_derivative(X0) - 0.0)
    return l0, l1


def simulate_pivots(k: int = 2, n_sim: int = 100_000, B: int = 10_000, seed: int = 0,
                    threads: int | None = None) -> PivotTable:
    """Monte-Carlo draws of the knot-standardised pivots.

    Each replication draws ``y_i = 12 (x_i - 1/2)^2 + e_i`` on ``x_i = i/n_sim``
    with standard normal noise, fits convex least squares and records
    ``L0 = sqrt(n dtau) (g(1/2) - f(1/2))`` and
    ``L1 = sqrt(n dtau^3) (g'(1/2-) - f'(1/2))``, where ``dtau`` is the
    distance between the knots adjacent to 1/2. Replication ``r`` uses the
    seed sequence ``[seed, r]``, so results do not depend on ``threads``.
    """
    if k not in SUPPORTED_K:
        raise DataError(f"unsupported curvature order k={k}")
    if n_sim < 100 or B < 100:
        raise DataError("need n_sim >= 100 and B >= 100")
    out = ordered_map(partial(_pivot_rep, n_sim=n_sim, seed=seed), range(B), threads,
                      chunksize=max(1, B // 64))
    arr = np.array(out)
    comments = (
        f"pivot draws for k={k}: convex LSE of 12(x-1/2)^2 + N(0,1) on x_i=i/{n_sim}",
        f"B={B} replications, master seed {seed}; replication r uses SeedSequence([seed, r])",
        "columns: L0 = sqrt(n dtau)(g(1/2)-f(1/2)), L1 = sqrt(n dtau^3)(g'(1/2-)-f'(1/2))",
    )
    return PivotTable(arr[:, 0], arr[:, 1], k, n_sim, B, seed, comments)


# ---------------------------------------------------------------------------
# intervals


@dataclass(frozen=True)
class PointwiseCI:
    """Symmetric interval ``center +/- half_width``."""

    center: float
    half_width: float
    alpha: float
    kind: str
    s0: float
    status: str = "ok"

    def __post_init__(self):
        if not self.half_width >= 0.0:
            raise DataError("half width must be non-negative")

    @property
    def lower(self) -> float:
        return self.center - self.half_width

    @property
    def upper(self) -> float:
        return self.center + self.half_width

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise DataError("alpha must lie in (0, 1)")


def _status(*chis: ChiEstimate) -> str:
    if any(c.value == 0.0 for c in chis):
        warnings.warn("chi estimate is zero; interval is degenerate",
                      DegenerateIntervalWarning, stacklevel=3)
        return "degenerate"
    return "ok"


def pointwise_ci(fit: LogConcaveFit, chi: ChiEstimate, pivots: PivotTable, s0: float,
                 alpha: float = 0.05, kind: str = "density", n: int | None = None) -> PointwiseCI:
    """Interval for the density (``kind="density"``) or its left derivative at ``s0``.

    Half widths are ``sqrt(chi / (n dtau)) c0`` and ``sqrt(chi / (n dtau^3)) c1``,
    where ``dtau`` is the gap between the knots adjacent to ``s0`` and
    ``c0, c1`` are ``1 - alpha`` quantiles of the absolute pivots.
    """
    _check_alpha(alpha)
    if n is None or n < 1:
        raise DataError("sample size n is required")
    lo, hi = adjacent_knots(fit, s0)
    dtau = hi - lo
    status = _status(chi)
    if kind == "density":
        center = density(fit, s0)
        half = math.sqrt(chi.value / (n * dtau)) * pivots.c_alpha(alpha, 0)
    elif kind in ("derivative", "deriv"):
        kind = "derivative"
        center = left_derivative(fit, s0)
        half = math.sqrt(chi.value / (n * dtau ** 3)) * pivots.c_alpha(alpha, 1)
    else:
        raise DataError(f"unknown interval kind {kind!r}")
    return PointwiseCI(float(center), float(half), alpha, kind, float(s0), status)


def _contrast_quantile(pivots: PivotTable, coef1: float, coef0: float, alpha: float) -> float:
    first, second = pivots.halves()
    return float(np.quantile(np.abs(coef0 * second - coef1 * first), 1.0 - alpha))


def difference_ci(fit1: LogConcaveFit, fit0: LogConcaveFit, chi1: ChiEstimate,
                  chi0: ChiEstimate, pivots: PivotTable, s0: float, alpha: float = 0.05,
                  n: int | None = None) -> PointwiseCI:
    """Interval for ``p1(s0) - p0(s0)``.

    Arm 1 uses the first half of the stored ``L0`` draws and arm 0 the
    second half, so the two pivot streams are independent.
    """
    _check_alpha(alpha)
    if n is None or n < 1:
        raise DataError("sample size n is required")
    l1, u1 = adjacent_knots(fit1, s0)
    l0, u0 = adjacent_knots(fit0, s0)
    a1 = math.sqrt(chi1.value / (n * (u1 - l1)))
    a0 = math.sqrt(chi0.value / (n * (u0 - l0)))
    status = _status(chi1, chi0)
    center = density(fit1, s0) - density(fit0, s0)
    return PointwiseCI(float(center), _contrast_quantile(pivots, a1, a0, alpha), alpha,
                       "difference", float(s0), status)


def log_ratio_ci(fit1: LogConcaveFit, fit0: LogConcaveFit, chi1: ChiEstimate,
                 chi0: ChiEstimate, pivots: PivotTable, s0: float, alpha: float = 0.05,
                 n: int | None = None) -> PointwiseCI:
    """Interval for ``log(p1(s0) / p0(s0))``; exponentiate the ends for a ratio interval."""
    _check_alpha(alpha)
    if n is None or n < 1:
        raise DataError("sample size n is required")
    p1 = density(fit1, s0)
    p0 = density(fit0, s0)
    if p1 <= 0.0 or p0 <= 0.0:
        raise DataError("log-ratio interval needs positive densities at s0")
    l1, u1 = adjacent_knots(fit1, s0)
    l0, u0 = adjacent_knots(fit0, s0)
    b1 = math.sqrt(chi1.value) / p1 / math.sqrt(n * (u1 - l1))
    b0 = math.sqrt(chi0.value) / p0 / math.sqrt(n * (u0 - l0))
    status = _status(chi1, chi0)
    return PointwiseCI(math.log(p1 / p0), _contrast_quantile(pivots, b1, b0, alpha), alpha,
                       "log_ratio", float(s0), status)


def band_order_statistics(fit: LogConcaveFit, n: int, seed: int = 0) -> np.ndarray:
    """Sorted pseudo-sample ``F^{-1}(U_(i))`` from the fitted distribution."""
    if n < 1:
        raise DataError("n must be positive")
    u = np.sort(np.random.default_rng(seed).uniform(size=n))
    # guard the open interval required by the quantile function
    u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
    return quantile(fit, u)
