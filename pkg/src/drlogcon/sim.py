"""Synthetic study: data generator, true densities and experiment drivers.

Design: four independent U[0, 1] covariates, a logistic propensity, and
given ``S = sum_j X_j`` the outcome is ``U[4, 4 + 2S]`` under treatment and
``U[8 - 2S, 8]`` under control. Both counterfactual densities have mean 6
and variance 16/9, and ``p0(y) = p1(12 - y)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special

from ._parallel import ordered_map
from ._quad import piecewise_integral
from .data import ObservedSample
from .exceptions import DataError, DrlogconError
from .inference import (PivotTable, crossfit_chi, default_pivot_table, difference_ci,
                        estimate_chi, log_ratio_ci, pointwise_ci)
from .logconcave import WeightedAtoms, density, logconcave_mle
from .nuisance import (DgpParams, NuisancePair, fit_location_scale, fit_logistic_propensity,
                       linear_predictor)
from .onestep import estimate_density, estimate_density_crossfit, make_folds

# ---------------------------------------------------------------------------
# Irwin-Hall density of the sum of four uniforms, piece by piece on [j, j+1]
# as cubic coefficients (c0, c1, c2, c3) of 6 * ir4.

_IR4_COEF = np.array([
    [0.0, 0.0, 0.0, 1.0],
    [4.0, -12.0, 12.0, -3.0],
    [-44.0, 60.0, -24.0, 3.0],
    [64.0, -48.0, 12.0, -1.0],
])


def _piece(x):
    return np.clip(np.floor(x), 0, 3).astype(np.int64)


def ir4(x):
    """Density of the sum of four independent U[0, 1] variables."""
    x = np.asarray(x, dtype=np.float64)
    c = _IR4_COEF[_piece(x)]
    val = (c[..., 0] + x * (c[..., 1] + x * (c[..., 2] + x * c[..., 3]))) / 6.0
    out = np.where((x > 0) & (x < 4), val, 0.0)
    return float(out) if out.ndim == 0 else out


def _ir4_antideriv(j, x):
    c = _IR4_COEF[j]
    return (c[..., 0] * x + c[..., 1] * x**2 / 2 + c[..., 2] * x**3 / 3 + c[..., 3] * x**4 / 4) / 6.0


def ir4_cdf(x):
    """Distribution function of the sum of four uniforms."""
    x = np.asarray(x, dtype=np.float64)
    xc = np.clip(x, 0.0, 4.0)
    j = _piece(xc)
    out = np.zeros_like(xc)
    for p in range(4):
        below = j > p
        out += np.where(below, _ir4_antideriv(p, p + 1.0) - _ir4_antideriv(p, float(p)), 0.0)
    out += _ir4_antideriv(j, xc) - _ir4_antideriv(j, j.astype(np.float64))
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _g_antideriv(j, x):
    # antiderivative of ir4(x) / (2x) on piece j (the c0 term is zero on piece 0)
    c = _IR4_COEF[j]
    with np.errstate(divide="ignore", invalid="ignore"):
        logterm = np.where(c[..., 0] != 0.0, c[..., 0] * np.log(np.maximum(x, 1e-300)), 0.0)
    return (logterm + c[..., 1] * x + c[..., 2] * x**2 / 2 + c[..., 3] * x**3 / 3) / 12.0


def _tail_g(u):
    """``G(u) = int_u^4 ir4(x) / (2x) dx`` for ``u`` in [0, 4]."""
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 4.0)
    j = _piece(u)
    out = _g_antideriv(j, np.minimum(j + 1.0, 4.0)) - _g_antideriv(j, u)
    for p in range(4):
        above = j < p
        out += np.where(above, _g_antideriv(p, p + 1.0) - _g_antideriv(p, float(p)), 0.0)
    return out


SUPPORTS = {1: (4.0, 12.0), 0: (0.0, 8.0)}
TRUE_MEAN = 6.0
TRUE_VAR = 16.0 / 9.0


def _to_arm1(arm, y):
    y = np.asarray(y, dtype=np.float64)
    if arm == 1:
        return y
    if arm == 0:
        return 12.0 - y
    raise DataError("arm must be 0 or 1")


def true_density(arm: int, y):
    """Counterfactual density ``p_a(y)``, zero outside the open support.

    For arm 1, ``p1(y) = G((y - 4) / 2)`` on (4, 12) with
    ``G(u) = int_u^4 ir4(x) / (2x) dx`` evaluated in closed form;
    ``p0(y) = p1(12 - y)``.
    """
    z = _to_arm1(arm, y)
    out = np.where((z > 4.0) & (z < 12.0), _tail_g((z - 4.0) / 2.0), 0.0)
    return float(out) if out.ndim == 0 else out


def true_cdf(arm: int, y):
    """Counterfactual distribution function ``F_a(y)``."""
    z = _to_arm1(arm, y)
    v = np.clip((z - 4.0) / 2.0, 0.0, 4.0)
    f1 = np.clip(2.0 * v * _tail_g(v) + ir4_cdf(v), 0.0, 1.0)
    out = f1 if arm == 1 else 1.0 - f1
    return float(out) if np.ndim(out) == 0 else out


def true_density_derivative(arm: int, y):
    """Derivative of ``p_a``; on (4, 12), ``p1'(y) = -ir4(v) / (4v)`` with ``v = (y - 4)/2``."""
    z = _to_arm1(arm, y)
    v = (z - 4.0) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = np.where((z > 4.0) & (z < 12.0), -ir4(v) / (4.0 * v), 0.0)
    out = d1 if arm == 1 else -d1
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class TrueDensity:
    """Closed-form counterfactual density of one arm."""

    arm: int

    @property
    def support(self) -> tuple[float, float]:
        return SUPPORTS[self.arm]

    def __call__(self, y):
        return true_density(self.arm, y)

    def cdf(self, y):
        return true_cdf(self.arm, y)

    def derivative(self, y):
        return true_density_derivative(self.arm, y)

    @property
    def breakpoints(self) -> np.ndarray:
        lo, _ = self.support
        return lo + 2.0 * np.arange(5)


# ---------------------------------------------------------------------------
# data generator


@dataclass(frozen=True)
class DgpDraw:
    """One simulated data set and the seed that produced it."""

    sample: ObservedSample
    seed: object


def _rng(seed):
    entropy = list(seed) if isinstance(seed, (tuple, list)) else seed
    return np.random.default_rng(np.random.SeedSequence(entropy))


def draw_dgp(n: int, seed=0, params: DgpParams = DgpParams(),
             force_arm: int | None = None) -> DgpDraw:
    """Simulate ``n`` rows of the synthetic design.

    ``seed`` may be an integer or a tuple of integers (used as seed-sequence
    entropy). ``force_arm`` overrides the treatment, which samples the
    counterfactual outcome ``Y^a`` directly.
    """
    if n < 2:
        raise DataError("n must be at least 2")
    rng = _rng(seed)
    x = rng.uniform(size=(n, params.d))
    prob = special.expit(linear_predictor(x, np.asarray(params.coef)))
    ua = rng.uniform(size=n)
    a = (ua < prob).astype(np.int8) if force_arm is None else np.full(n, force_arm, np.int8)
    s = x.sum(axis=1)
    lo = (8.0 - 4.0 * a) + (2.0 * a - 2.0) * s
    hi = (8.0 - 4.0 * a) + 2.0 * a * s
    y = lo + rng.uniform(size=n) * (hi - lo)
    return DgpDraw(ObservedSample(x, a, y), seed)


# ---------------------------------------------------------------------------
# nuisance specifications of the study

ALL_FEATURES = (0, 1, 2, 3)
PROPENSITY_MISSPEC = (1, 3)     # drops X1 and X3
OUTCOME_MISSPEC = (1, 2)        # drops X1 and X4
CASES = (1, 2, 3)


def case_nuisances(sample: ObservedSample, arm: int, case: int) -> NuisancePair:
    """Nuisances for a study case.

    Case 1: both models correct. Case 2: only the propensity is correct.
    Case 3: only the conditional CDF is correct.
    """
    if case not in CASES:
        raise DataError(f"unknown case {case}")
    pf = PROPENSITY_MISSPEC if case == 3 else ALL_FEATURES
    of = OUTCOME_MISSPEC if case == 2 else ALL_FEATURES
    prop = fit_logistic_propensity(sample, arm, pf)
    clip = (4.0, None) if arm == 1 else (None, 8.0)
    cdfm = fit_location_scale(sample, arm, "uniform", of, support_clip=clip)
    return NuisancePair(prop, cdfm, arm, f"case{case}")


def case_factory(arm: int, case: int):
    """Picklable nuisance factory for cross-fitting."""
    return partial(_case_factory_call, arm=arm, case=case)


def _case_factory_call(sample, arm, case):
    return case_nuisances(sample, arm, case)


def naive_fit(sample: ObservedSample, arm: int):
    """Unadjusted log-concave MLE of the arm's observed outcomes."""
    ya = sample.y[sample.arm_mask(arm)]
    vals, counts = np.unique(ya, return_counts=True)
    if vals.size < 2:
        raise DataError("naive fit needs two distinct outcomes")
    return logconcave_mle(WeightedAtoms(vals, counts / counts.sum()))


def l1_distance(fit, arm: int, atol: float = 1e-8) -> float:
    """``int |p_hat - p_a|`` with quadrature split at knots and truth breakpoints."""
    truth = TrueDensity(arm)
    lo, hi = fit.support
    tlo, thi = truth.support
    breaks = np.concatenate(([min(lo, tlo), max(hi, thi), lo, hi], fit.knot_locations,
                             truth.breakpoints))
    return piecewise_integral(lambda s: np.abs(density(fit, s) - truth(s)), breaks, atol)


# ---------------------------------------------------------------------------
# experiments


def _rep_seed(seed, n, r):
    return (int(seed), int(n), int(r))


def _l1_rep(task, arm, cases, crossfit, seed):
    n, r = task
    draw = draw_dgp(n, _rep_seed(seed, n, r))
    smp = draw.sample
    out = {}
    for case in cases:
        key = ("onestep", case)
        try:
            fit = estimate_density(smp, arm, case_nuisances(smp, arm, case))
            out[key] = l1_distance(fit, arm)
        except DrlogconError as exc:
            out[key] = exc.__class__.__name__ + ": " + str(exc)
        if crossfit:
            key = ("crossfit", case)
            try:
                fit = estimate_density_crossfit(smp, arm, case_factory(arm, case), crossfit,
                                                seed=r)
                out[key] = l1_distance(fit, arm)
            except DrlogconError as exc:
                out[key] = exc.__class__.__name__ + ": " + str(exc)
    try:
        out[("naive", 0)] = l1_distance(naive_fit(smp, arm), arm)
    except DrlogconError as exc:
        out[("naive", 0)] = exc.__class__.__name__ + ": " + str(exc)
    return out


def run_l1_experiment(n_values: Sequence[int] = (500, 1000, 2500), reps: int = 200,
                      cases: Sequence[int] = (1,), arm: int = 1, crossfit: int | None = None,
                      seed: int = 0, threads: int | None = None) -> list[dict]:
    """Mean L1 error of the density estimators per sample size and case.

    All cases and the naive comparator are evaluated on the same simulated
    data sets. Failed replications are counted in ``failures`` and their
    messages returned in ``errors``.
    """
    tasks = [(int(n), r) for n in n_values for r in range(reps)]
    results = ordered_map(partial(_l1_rep, arm=arm, cases=tuple(cases), crossfit=crossfit,
                                  seed=seed), tasks, threads, chunksize=max(1, len(tasks) // 64))
    rows = []
    keys = [("onestep", c) for c in cases]
    if crossfit:
        keys += [("crossfit", c) for c in cases]
    keys.append(("naive", 0))
    for n in n_values:
        per_n = [res for (nn, _), res in zip(tasks, results) if nn == n]
        for method, case in keys:
            vals = [res[(method, case)] for res in per_n]
            good = np.array([v for v in vals if isinstance(v, float)])
            errs = [v for v in vals if not isinstance(v, float)]
            rows.append({
                "n": int(n), "method": method, "case": case if method != "naive" else "",
                "reps": len(vals), "failures": len(errs),
                "mean_l1": float(good.mean()) if good.size else math.nan,
                "se_l1": float(good.std(ddof=1) / math.sqrt(good.size)) if good.size > 1 else math.nan,
                "errors": errs,
            })
    return rows


def _truth_at(kind, arm, s0):
    if kind == "density":
        return true_density(arm, s0)
    if kind == "derivative":
        return true_density_derivative(arm, s0)
    if kind == "difference":
        return true_density(1, s0) - true_density(0, s0)
    if kind == "log_ratio":
        return math.log(true_density(1, s0) / true_density(0, s0))
    raise DataError(f"unknown kind {kind!r}")


def _fit_arm(smp, arm, case, crossfit, r, points):
    if crossfit:
        factory = case_factory(arm, case)
        folds = make_folds(smp.n, crossfit, r)
        fit = estimate_density_crossfit(smp, arm, factory, folds=folds)
        chis = [crossfit_chi(smp, arm, factory, folds, s0) for s0 in points]
    else:
        nuis = case_nuisances(smp, arm, case)
        fit = estimate_density(smp, arm, nuis)
        chis = [estimate_chi(smp, arm, nuis, s0) for s0 in points]
    return fit, chis


def _coverage_rep(r, n, case, arm, kind, points, alpha, crossfit, seed, pivots):
    smp = draw_dgp(n, _rep_seed(seed, n, r)).sample
    res = []
    try:
        if kind in ("density", "derivative"):
            fit, chis = _fit_arm(smp, arm, case, crossfit, r, points)
            for s0, chi in zip(points, chis):
                try:
                    ci = pointwise_ci(fit, chi, pivots, s0, alpha, kind, n)
                    res.append((ci.covers(_truth_at(kind, arm, s0)), 2 * ci.half_width))
                except DrlogconError as exc:
                    res.append(str(exc))
        else:
            fit1, chis1 = _fit_arm(smp, 1, case, crossfit, r, points)
            fit0, chis0 = _fit_arm(smp, 0, case, crossfit, r, points)
            build = difference_ci if kind == "difference" else log_ratio_ci
            for s0, c1, c0 in zip(points, chis1, chis0):
                try:
                    ci = build(fit1, fit0, c1, c0, pivots, s0, alpha, n)
                    res.append((ci.covers(_truth_at(kind, arm, s0)), 2 * ci.half_width))
                except DrlogconError as exc:
                    res.append(str(exc))
    except DrlogconError as exc:
        res = [str(exc)] * len(points)
    return res


CONTRAST_POINTS = tuple(np.round(np.linspace(4.2, 7.8, 41), 10))


def run_coverage_experiment(n: int = 2500, reps: int = 300, case: int = 1, arm: int = 1,
                            kind: str = "density",
                            points: Sequence[float] = (5.5, 6.0, 6.5, 7.0),
                            alpha: float = 0.05, crossfit: int | None = None, seed: int = 0,
                            pivots: PivotTable | None = None,
                            threads: int | None = None) -> list[dict]:
    """Empirical coverage and mean width of pointwise intervals.

    ``kind`` is ``density`` or ``derivative`` (for ``arm``) or ``difference``
    or ``log_ratio`` (arm 1 versus arm 0). A replication whose interval
    cannot be formed at a point is counted under ``failures`` for that
    point and excluded from its coverage fraction.
    """
    if kind not in ("density", "derivative", "difference", "log_ratio"):
        raise DataError(f"unknown kind {kind!r}")
    pts = [float(p) for p in points]
    lo, hi = (4.0, 8.0) if kind in ("difference", "log_ratio") else SUPPORTS[arm]
    if any(not lo < p < hi for p in pts):
        raise DataError("evaluation points must lie inside the true support")
    pivots = default_pivot_table() if pivots is None else pivots
    results = ordered_map(partial(_coverage_rep, n=n, case=case, arm=arm, kind=kind,
                                  points=pts, alpha=alpha, crossfit=crossfit, seed=seed,
                                  pivots=pivots), range(reps), threads,
                          chunksize=max(1, reps // 32))
    rows = []
    for j, s0 in enumerate(pts):
        vals = [res[j] for res in results]
        good = [v for v in vals if isinstance(v, tuple)]
        errs = [v for v in vals if not isinstance(v, tuple)]
        rows.append({
            "n": n, "case": case, "kind": kind, "arm": arm if kind in ("density", "derivative") else "",
            "s0": s0, "truth": _truth_at(kind, arm, s0), "reps": len(vals),
            "failures": len(errs),
            "coverage": float(np.mean([g[0] for g in good])) if good else math.nan,
            "mean_width": float(np.mean([g[1] for g in good])) if good else math.nan,
            "errors": errs,
        })
    return rows


def write_table(rows: list[dict], path) -> None:
    """Write experiment rows to CSV (the ``errors`` lists become a count only)."""
    path = Path(path)
    if not rows:
        path.write_text("")
        return
    cols = [c for c in rows[0] if c != "errors"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in cols])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v
