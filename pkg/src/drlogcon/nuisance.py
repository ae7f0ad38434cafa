"""Nuisance estimators: propensity scores and conditional outcome CDFs.

A nuisance pair for arm ``a`` is a propensity model returning
``pi_a(x) = P(A = a | X = x)`` and a conditional CDF model returning
``phi_a(s | x) = P(Y <= s | A = a, X = x)``. Both are plain callables so
externally fitted models can be injected.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

from .data import ObservedSample
from .exceptions import DataError

DEFAULT_EPS = 0.01
SIGMA_MIN = 1e-6
SEPARATION_BOUND = 50.0
SQRT3 = math.sqrt(3.0)


def linear_predictor(x: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """``coef[0] + sum_j coef[j+1] * x[:, j]`` accumulated column by column.

    The explicit loop fixes the summation order, so predictions do not
    depend on the BLAS build or its thread count.
    """
    out = np.full(x.shape[0], float(coef[0]))
    for j in range(x.shape[1]):
        out += coef[j + 1] * x[:, j]
    return out


def _design(x: np.ndarray, features) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x if features is None else x[:, list(features)]


# ---------------------------------------------------------------------------
# propensity models


@dataclass(frozen=True)
class PropensityModel:
    """Propensity score ``pi_a(x)`` clipped to ``[eps, 1 - eps]``.

    Parameters
    ----------
    fn : callable
        Maps an ``(n, d)`` covariate matrix to raw ``pi_a`` values.
    eps : float
        Truncation bound in (0, 0.5).
    description : str
        Human-readable tag.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    eps: float = DEFAULT_EPS
    description: str = "custom"
    trained: bool = True

    def __post_init__(self):
        if not 0.0 < self.eps < 0.5:
            raise DataError("propensity truncation eps must lie in (0, 0.5)")

    def predict(self, x) -> np.ndarray:
        raw = np.asarray(self.fn(np.asarray(x, dtype=np.float64)), dtype=np.float64)
        return np.clip(raw, self.eps, 1.0 - self.eps)

    __call__ = predict


def constant_propensity(value: float, eps: float = DEFAULT_EPS) -> PropensityModel:
    return PropensityModel(lambda x: np.full(np.asarray(x).shape[0], float(value)), eps,
                           f"constant({value})")


def _logistic_irls(z: np.ndarray, t: np.ndarray, tol=1e-8, max_iter=100) -> np.ndarray:
    n, p = z.shape
    design = np.column_stack((np.ones(n), z))
    if np.linalg.matrix_rank(design) < p + 1:
        raise DataError("rank-deficient propensity design")
    beta = np.zeros(p + 1)
    mean_t = t.mean()
    if mean_t in (0.0, 1.0):
        raise DataError("quasi-separation: one treatment arm is empty")
    beta[0] = math.log(mean_t / (1.0 - mean_t))
    for _ in range(max_iter):
        prob = special.expit(linear_predictor(z, beta))
        wts = prob * (1.0 - prob)
        grad = design.T @ (t - prob)
        info = design.T @ (design * wts[:, None])
        step = np.linalg.solve(info, grad)
        beta = beta + step
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            raise DataError("quasi-separation: diverging logistic coefficients")
        if np.max(np.abs(step)) < tol:
            break
    return beta


def fit_logistic_propensity(sample: ObservedSample, arm: int,
                            features: Sequence[int] | None = None,
                            eps: float = DEFAULT_EPS) -> PropensityModel:
    """Logistic-regression propensity fitted by Newton-IRLS.

    Parameters
    ----------
    sample : ObservedSample
    arm : {0, 1}
        Arm whose propensity ``P(A = arm | X)`` is returned.
    features : sequence of int, optional
        Covariate columns to include (all by default). Omitting columns
        gives a mis-specified model.
    eps : float
        Clipping bound for predictions.
    """
    beta = _logistic_irls(_design(sample.x, features), sample.a.astype(np.float64))

    def fn(x, beta=beta, features=features, arm=arm):
        p1 = special.expit(linear_predictor(_design(x, features), beta))
        return p1 if arm == 1 else 1.0 - p1

    model = PropensityModel(fn, eps, f"logistic(features={list(features) if features is not None else 'all'})")
    object.__setattr__(model, "coef", beta)
    return model


# ---------------------------------------------------------------------------
# conditional CDF models


class ConditionalCDFModel:
    """Conditional CDF ``phi_a(s | x)`` evaluated on a vector of ``s``.

    Subclasses implement :meth:`evaluate`, which returns an ``(n, len(s))``
    matrix for an ``(n, d)`` covariate matrix.
    """

    family = "custom"

    def __init__(self, fn: Callable | None = None, family: str = "custom"):
        self._fn = fn
        self.family = family

    def evaluate(self, s, x) -> np.ndarray:
        if self._fn is None:
            raise NotImplementedError
        return np.asarray(self._fn(np.atleast_1d(np.asarray(s, dtype=np.float64)),
                                   np.asarray(x, dtype=np.float64)), dtype=np.float64)

    def __call__(self, s, x) -> np.ndarray:
        return self.evaluate(s, x)


# standardised base CDFs H: mean 0, variance 1
GAMMA_SHAPE = 4.0


def _base_cdf(name: str) -> Callable[[np.ndarray], np.ndarray]:
    if name == "uniform":
        return lambda z: np.clip((z + SQRT3) / (2.0 * SQRT3), 0.0, 1.0)
    if name == "normal":
        return special.ndtr
    if name == "gamma":
        k = GAMMA_SHAPE
        return lambda z: stats.gamma.cdf(z * math.sqrt(k) + k, k)
    if name == "exponential":
        return lambda z: -np.expm1(-np.maximum(z + 1.0, 0.0))
    raise DataError(f"unknown base distribution {name!r}")


BASES = ("uniform", "normal", "gamma", "exponential")


class LocationScaleCDF(ConditionalCDFModel):
    """``H((s - mu(x)) / sigma(x))`` for a standardised base CDF ``H``."""

    family = "location-scale"

    def __init__(self, base: str, mu_fn: Callable, sigma_fn: Callable):
        self.base = base
        self._h = _base_cdf(base)
        self.mu_fn = mu_fn
        self.sigma_fn = sigma_fn

    def mu(self, x) -> np.ndarray:
        return np.asarray(self.mu_fn(np.asarray(x, dtype=np.float64)), dtype=np.float64)

    def sigma(self, x) -> np.ndarray:
        sig = np.asarray(self.sigma_fn(np.asarray(x, dtype=np.float64)), dtype=np.float64)
        return np.maximum(sig, SIGMA_MIN)

    def evaluate(self, s, x) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        mu = self.mu(x)
        sig = self.sigma(x)
        return self._h((s[None, :] - mu[:, None]) / sig[:, None])


def _ols(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    design = np.column_stack((np.ones(z.shape[0]), z))
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return coef


def fit_location_scale(sample: ObservedSample, arm: int, base: str = "normal",
                       features: Sequence[int] | None = None,
                       sigma: str = "residual",
                       support_clip: tuple[float | None, float | None] | None = None
                       ) -> LocationScaleCDF:
    """Location-scale conditional CDF fitted by least squares within one arm.

    Parameters
    ----------
    sample : ObservedSample
    arm : {0, 1}
    base : {"uniform", "normal", "gamma", "exponential"}
    features : sequence of int, optional
        Covariate columns for the mean regression (all by default).
    sigma : {"residual", "constant"}
        ``"residual"`` regresses squared residuals on the same features;
        ``"constant"`` uses the pooled residual standard deviation.
    support_clip : (lower, upper), optional
        Only for the uniform base. Exactly one bound must be given. It acts
        as an anchor: the fitted mean is clipped to the anchor side and the
        conditional law is uniform between the anchor and its reflection
        through the mean (e.g. lower bound 4 gives ``U[4, 2 mu - 4]``).
    """
    mask = sample.arm_mask(arm)
    if not mask.any():
        raise DataError(f"arm {arm} is empty")
    z = _design(sample.x[mask], features)
    y = sample.y[mask]
    if np.ptp(y) == 0.0:
        raise DataError("degenerate regression: arm outcomes have zero variance")
    coef = _ols(z, y)

    def raw_mu(x, coef=coef, features=features):
        return linear_predictor(_design(x, features), coef)

    if support_clip is not None:
        if base != "uniform":
            raise DataError("support_clip is only defined for the uniform base")
        lo, hi = support_clip
        if (lo is None) == (hi is None):
            raise DataError("support_clip needs exactly one finite bound")
        if lo is not None:
            anchor = float(lo)
            mu_fn = lambda x: np.maximum(raw_mu(x), anchor)  # noqa: E731
        else:
            anchor = float(hi)
            mu_fn = lambda x: np.minimum(raw_mu(x), anchor)  # noqa: E731
        sigma_fn = lambda x: np.abs(mu_fn(x) - anchor) / SQRT3  # noqa: E731
        model = LocationScaleCDF(base, mu_fn, sigma_fn)
        model.anchor = anchor
        return model

    resid2 = (y - raw_mu(sample.x[mask])) ** 2
    if sigma == "constant":
        s_hat = math.sqrt(max(resid2.mean(), SIGMA_MIN ** 2))
        sigma_fn = lambda x: np.full(np.asarray(x).shape[0], s_hat)  # noqa: E731
    elif sigma == "residual":
        vcoef = _ols(z, resid2)

        def sigma_fn(x, vcoef=vcoef, features=features):
            var = linear_predictor(_design(x, features), vcoef)
            return np.sqrt(np.maximum(var, SIGMA_MIN ** 2))
    else:
        raise DataError(f"unknown sigma rule {sigma!r}")
    return LocationScaleCDF(base, raw_mu, sigma_fn)


# ---------------------------------------------------------------------------
# nuisance pairs


@dataclass(frozen=True)
class NuisancePair:
    """Propensity and conditional-CDF model for one treatment arm."""

    propensity: PropensityModel
    cdf_model: ConditionalCDFModel
    arm: int = 1
    description: str = field(default="", compare=False)


@dataclass(frozen=True)
class DgpParams:
    """Parameters of the synthetic data-generating process.

    ``coef`` holds the intercept and slopes of the logistic propensity in
    the four uniform covariates.
    """

    coef: tuple = (-1.5, 0.25, 0.5, 0.75, 1.0)
    d: int = 4


def true_propensity(x, params: DgpParams = DgpParams()) -> np.ndarray:
    """``P(A = 1 | X = x)`` of the synthetic design."""
    return special.expit(linear_predictor(np.asarray(x, dtype=np.float64),
                                          np.asarray(params.coef)))


def _true_cdf_fn(arm: int):
    def fn(s, x):
        ssum = np.asarray(x, dtype=np.float64).sum(axis=1)
        width = np.maximum(2.0 * ssum, 1e-300)
        if arm == 1:
            lo = np.full_like(ssum, 4.0)
        else:
            lo = 8.0 - 2.0 * ssum
        return np.clip((s[None, :] - lo[:, None]) / width[:, None], 0.0, 1.0)
    return fn


def oracle_nuisance(arm: int, params: DgpParams = DgpParams(),
                    eps: float = DEFAULT_EPS) -> NuisancePair:
    """True nuisance functions of the synthetic design for ``arm``.

    Given ``S = sum_j X_j``, ``Y | A=1`` is ``U[4, 4 + 2S]`` and
    ``Y | A=0`` is ``U[8 - 2S, 8]``.
    """
    if arm not in (0, 1):
        raise DataError("arm must be 0 or 1")

    def pi(x):
        p1 = true_propensity(x, params)
        return p1 if arm == 1 else 1.0 - p1

    return NuisancePair(PropensityModel(pi, eps, "oracle"),
                        ConditionalCDFModel(_true_cdf_fn(arm), "oracle"), arm, "oracle")


# ---------------------------------------------------------------------------
# externally supplied predictions


class _RowPredictions:
    """Per-row values that ignore covariates but check the row count."""

    def __init__(self, values: np.ndarray):
        self.values = values

    def __call__(self, x):
        if np.asarray(x).shape[0] != self.values.shape[0]:
            raise DataError("external predictions do not match the number of rows")
        return self.values


class ExternalCDF(ConditionalCDFModel):
    """Per-row conditional CDF values on a set of ``s`` points, linearly interpolated in ``s``."""

    family = "external"

    def __init__(self, s_points: np.ndarray, values: np.ndarray):
        order = np.argsort(s_points)
        self.s_points = np.asarray(s_points, dtype=np.float64)[order]
        vals = np.clip(np.asarray(values, dtype=np.float64)[:, order], 0.0, 1.0)
        # enforce monotonicity in s row by row
        self.values = np.maximum.accumulate(vals, axis=1)

    def evaluate(self, s, x) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        if np.asarray(x).shape[0] != self.values.shape[0]:
            raise DataError("external predictions do not match the number of rows")
        idx = np.searchsorted(self.s_points, s, side="right") - 1
        idx = np.clip(idx, 0, self.s_points.size - 2)
        s0 = self.s_points[idx]
        s1 = self.s_points[idx + 1]
        lam = np.clip((s - s0) / (s1 - s0), 0.0, 1.0)
        v0 = self.values[:, idx]
        v1 = self.values[:, idx + 1]
        return (1.0 - lam)[None, :] * v0 + lam[None, :] * v1


def load_predictions(path, n_rows: int, arm: int, eps: float = DEFAULT_EPS) -> NuisancePair:
    """Read external nuisance predictions.

    The file needs a ``pi_hat`` column with ``P(A = arm | X)`` per row and
    at least two columns named ``F@<s>`` holding ``phi(s | X)`` per row.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    if "pi_hat" not in header:
        raise DataError(f"{path}: missing column pi_hat")
    f_cols = [i for i, h in enumerate(header) if h.startswith("F@")]
    if len(f_cols) < 2:
        raise DataError(f"{path}: need at least two F@<s> columns")
    try:
        s_pts = np.array([float(header[i][2:]) for i in f_cols])
        arr = np.array([[float(r[i]) for i in range(len(header))] for r in rows])
    except (ValueError, IndexError):
        raise DataError(f"{path}: non-numeric or missing cell") from None
    if arr.shape[0] != n_rows:
        raise DataError(f"{path}: {arr.shape[0]} rows but the sample has {n_rows}")
    pi = arr[:, header.index("pi_hat")]
    return NuisancePair(PropensityModel(_RowPredictions(pi), eps, f"external:{path.name}"),
                        ExternalCDF(s_pts, arr[:, f_cols]), arm, f"external:{path.name}")


# ---------------------------------------------------------------------------
# named specifications


def fit_nuisances(sample: ObservedSample, arm: int, spec: str = "logistic+ls-uniform",
                  eps: float = DEFAULT_EPS,
                  propensity_features: Sequence[int] | None = None,
                  outcome_features: Sequence[int] | None = None) -> NuisancePair:
    """Fit a nuisance pair by name.

    ``"logistic+ls-uniform"`` uses a logistic propensity and the uniform
    location-scale CDF anchored at the arm's outcome range boundary shared
    by all covariate values (the observed minimum for arm 1, the maximum
    for arm 0, matching the synthetic design). ``"logistic+ls-normal"``
    uses a normal base with residual-regression scale.
    """
    prop = fit_logistic_propensity(sample, arm, propensity_features, eps)
    if spec == "logistic+ls-uniform":
        ya = sample.y[sample.arm_mask(arm)]
        clip = (float(ya.min()), None) if arm == 1 else (None, float(ya.max()))
        cdfm = fit_location_scale(sample, arm, "uniform", outcome_features, support_clip=clip)
    elif spec == "logistic+ls-normal":
        cdfm = fit_location_scale(sample, arm, "normal", outcome_features)
    else:
        raise DataError(f"unknown nuisance specification {spec!r}")
    return NuisancePair(prop, cdfm, arm, spec)
