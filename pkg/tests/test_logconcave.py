import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from drlogcon._quad import piecewise_integral
from drlogcon.data import IsoGrid
from drlogcon.exceptions import DataError
from drlogcon.isotonic import CDFState, SteppedCDF
from drlogcon.logconcave import (OUTSIDE_SUPPORT, LogConcaveFit, WeightedAtoms, adjacent_knots,
                                 atoms_from_cdf, cdf, density, knots, left_derivative,
                                 log_density, logconcave_mle, quantile)
from oracles import is_concave, lc_numeric_max, lc_objective


def iso(values, pts=None):
    pts = np.arange(len(values), dtype=float) if pts is None else np.asarray(pts, float)
    return SteppedCDF(IsoGrid(pts, pts[1] - pts[0]), values, CDFState.ISOTONIZED)


def random_problem(rng, m_max=6):
    m = int(rng.integers(2, m_max + 1))
    t = np.sort(rng.uniform(-3, 3, size=m))
    while np.any(np.diff(t) < 1e-3):
        t = np.sort(rng.uniform(-3, 3, size=m))
    w = rng.dirichlet(np.ones(m) * rng.choice([0.3, 1.0, 5.0]))
    w = np.maximum(w, 1e-6)
    return t, w / w.sum()


# ---------------------------------------------------------------------------
# atoms


def test_atoms_from_cdf_examples():
    a = atoms_from_cdf(iso([0, 0.5, 0.5, 1]))
    np.testing.assert_array_equal(a.locations, [1, 3])
    np.testing.assert_allclose(a.weights, [0.5, 0.5])
    with pytest.raises(DataError, match="point mass"):
        atoms_from_cdf(iso([0, 1, 1, 1]))
    a = atoms_from_cdf(iso([0, 0.25, 0.75, 1]))
    np.testing.assert_array_equal(a.locations, [1, 2, 3])
    np.testing.assert_allclose(a.weights, [0.25, 0.5, 0.25])


def test_atoms_drop_tiny_weights():
    a = atoms_from_cdf(iso([0, 0.5, 0.5 + 1e-14, 1]))
    np.testing.assert_array_equal(a.locations, [1, 3])


def test_weighted_atoms_validation():
    with pytest.raises(DataError):
        WeightedAtoms([0.0], [1.0])
    with pytest.raises(DataError):
        WeightedAtoms([0.0, 1.0], [0.3, 0.3])
    with pytest.raises(DataError):
        WeightedAtoms([1.0, 0.0], [0.5, 0.5])
    with pytest.raises(DataError):
        WeightedAtoms([0.0, 1.0], [1.0, 0.0])


# ---------------------------------------------------------------------------
# MLE examples


def test_two_equal_atoms_give_uniform():
    fit = logconcave_mle(WeightedAtoms([0.0, 1.0], [0.5, 0.5]))
    s = np.linspace(0, 1, 101)
    assert np.max(np.abs(density(fit, s) - 1.0)) < 1e-6
    np.testing.assert_allclose(fit.phi, 0.0, atol=1e-10)
    # grid-search oracle over linear log-densities a + b x with unit mass
    best = max((0.5 * (a) + 0.5 * (a + b) - (math.exp(a) * (math.expm1(b) / b if b else 1.0)), b)
               for b in np.linspace(-1, 1, 201)
               for a in [-math.log(math.expm1(b) / b) if b else 0.0])
    assert abs(best[1]) < 1e-12


def test_three_symmetric_atoms_are_uniform():
    # with weights (1/4, 1/2, 1/4) the optimum is flat on [0, 2]; the numeric
    # oracle over all concave piecewise-linear candidates agrees
    t = np.array([0.0, 1.0, 2.0])
    w = np.array([0.25, 0.5, 0.25])
    fit = logconcave_mle(WeightedAtoms(t, w))
    _, best = lc_numeric_max(t, w)
    assert fit.objective() >= best - 1e-9
    np.testing.assert_allclose(fit.phi, math.log(0.5), atol=1e-8)
    np.testing.assert_array_equal(knots(fit), [0.0, 2.0])


def test_peaked_three_atoms_give_tent():
    t = np.array([0.0, 1.0, 2.0])
    w = np.array([0.1, 0.8, 0.1])
    fit = logconcave_mle(WeightedAtoms(t, w))
    _, best = lc_numeric_max(t, w)
    assert fit.objective() >= best - 1e-9
    assert fit.phi[1] > fit.phi[0] and fit.phi[0] == pytest.approx(fit.phi[2], abs=1e-10)
    np.testing.assert_array_equal(knots(fit), [0.0, 1.0, 2.0])
    assert density(fit, 1.0) == pytest.approx(math.exp(fit.phi[1]), rel=1e-12)
    assert adjacent_knots(fit, 0.4) == (0.0, 1.0)
    assert adjacent_knots(fit, 1.0) == (0.0, 2.0)


@pytest.mark.parametrize("c", [0.5, 3.0, 17.0])
def test_scale_equivariance(c):
    fit = logconcave_mle(WeightedAtoms([0.0, c], [0.5, 0.5]))
    assert density(fit, c / 2) == pytest.approx(1.0 / c, rel=1e-9)


def test_knots_of_straight_line_fit():
    atoms = WeightedAtoms([0.0, 1.0, 2.0], [0.2, 0.3, 0.5])
    fit = LogConcaveFit(atoms, [-1.0, -0.5, 0.0])
    np.testing.assert_array_equal(knots(fit), [0.0, 2.0])


def test_queries_on_uniform():
    fit = logconcave_mle(WeightedAtoms([0.0, 1.0], [0.5, 0.5]))
    assert density(fit, 0.5) == pytest.approx(1.0)
    assert log_density(fit, 0.5) == pytest.approx(0.0, abs=1e-12)
    assert left_derivative(fit, 0.5) == pytest.approx(0.0, abs=1e-12)
    assert density(fit, 1.5) == 0.0 and density(fit, -0.1) == 0.0
    assert log_density(fit, 1.5) is OUTSIDE_SUPPORT
    assert float(OUTSIDE_SUPPORT) == -math.inf
    assert cdf(fit, 0.25) == pytest.approx(0.25)
    assert quantile(fit, 0.25) == pytest.approx(0.25)
    np.testing.assert_array_equal(knots(fit), [0.0, 1.0])
    assert adjacent_knots(fit, 0.5) == (0.0, 1.0)
    with pytest.raises(DataError):
        adjacent_knots(fit, 1.5)
    with pytest.raises(DataError):
        adjacent_knots(fit, 1.0)
    with pytest.raises(DataError):
        left_derivative(fit, 0.0)
    with pytest.raises(DataError):
        quantile(fit, 1.0)


# ---------------------------------------------------------------------------
# properties over random problems


def test_optimality_against_perturbations(rng):
    for _ in range(200):
        t, w = random_problem(rng)
        fit = logconcave_mle(WeightedAtoms(t, w))
        base = lc_objective(t, w, fit.phi)
        tried = 0
        while tried < 1000:
            # random concave piecewise-linear direction: min of random affine pieces
            k = int(rng.integers(1, 4))
            a = rng.normal(size=k)
            b = rng.normal(size=k)
            eta = np.min(a[None, :] + b[None, :] * t[:, None], axis=1)
            for eps in (1e-3, -1e-3):
                cand = fit.phi + eps * eta
                if not is_concave(t, cand, 1e-12):
                    continue
                assert lc_objective(t, w, cand) <= base + 1e-12
                tried += 1


def test_matches_numeric_oracle(rng):
    for _ in range(40):
        t, w = random_problem(rng)
        fit = logconcave_mle(WeightedAtoms(t, w))
        _, best = lc_numeric_max(t, w)
        assert fit.objective() >= best - 1e-8


def test_normalisation_concavity_and_mean(rng):
    for _ in range(60):
        m = int(rng.integers(2, 300))
        t = np.unique(rng.standard_gamma(rng.uniform(0.5, 5), size=m) * rng.uniform(0.1, 10))
        if t.size < 2:
            continue
        w = rng.uniform(0.1, 1, size=t.size)
        w /= w.sum()
        fit = logconcave_mle(WeightedAtoms(t, w))
        assert fit.total_mass == pytest.approx(1.0, abs=1e-6)
        assert np.all(np.diff(fit.segment_slopes) <= 1e-8)
        mean = piecewise_integral(lambda s: s * density(fit, s), fit.knot_locations, 1e-12)
        assert mean == pytest.approx(float(w @ t), abs=1e-6 * max(1.0, np.ptp(t)))


def test_affine_equivariance(rng):
    for _ in range(20):
        t, w = random_problem(rng, 10)
        c, b = rng.uniform(0.2, 5), rng.normal() * 3
        f1 = logconcave_mle(WeightedAtoms(t, w))
        f2 = logconcave_mle(WeightedAtoms(c * t + b, w))
        s = np.linspace(t[0], t[-1], 37)
        np.testing.assert_allclose(density(f2, c * s + b), density(f1, s) / c, rtol=1e-8, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cdf_quantile_roundtrip(seed):
    rng = np.random.default_rng(seed)
    t = np.unique(rng.normal(size=int(rng.integers(2, 80))))
    w = rng.uniform(0.05, 1, size=t.size)
    fit = logconcave_mle(WeightedAtoms(t, w / w.sum()))
    u = rng.uniform(1e-6, 1 - 1e-6, size=200)
    np.testing.assert_allclose(cdf(fit, quantile(fit, u)), u, atol=1e-9)
    q = np.sort(rng.uniform(t[0] - 1, t[-1] + 1, size=100))
    assert np.all(np.diff(cdf(fit, q)) >= -1e-15)


def test_segment_integral_matches_quadrature(rng):
    t = np.array([0.0, 0.7, 1.5, 3.0])
    fit = logconcave_mle(WeightedAtoms(t, [0.1, 0.4, 0.35, 0.15]))
    for s in rng.uniform(0, 3, size=20):
        ref = quad(lambda v: density(fit, v), 0.0, s, points=list(t[(t > 0) & (t < s)]),
                   epsabs=1e-13, epsrel=1e-13)[0]
        assert cdf(fit, s) == pytest.approx(ref, abs=1e-9)


def test_left_derivative_is_left_sided():
    atoms = WeightedAtoms([0.0, 1.0, 2.0], [0.1, 0.8, 0.1])
    fit = logconcave_mle(atoms)
    h = 1e-7
    fd = (density(fit, 1.0) - density(fit, 1.0 - h)) / h
    assert left_derivative(fit, 1.0) == pytest.approx(fd, rel=1e-5)
    assert left_derivative(fit, 1.0) > 0


def test_json_roundtrip():
    fit = logconcave_mle(WeightedAtoms([0.0, 0.5, 1.2, 2.0], [0.1, 0.4, 0.3, 0.2]))
    obj = json.loads(fit.to_json())
    assert set(obj) == {"atoms", "weights", "phi", "knots"}
    back = LogConcaveFit.from_json(fit.to_json())
    np.testing.assert_array_equal(back.phi, fit.phi)
    np.testing.assert_array_equal(knots(back), knots(fit))
    with pytest.raises(DataError):
        LogConcaveFit.from_dict({"atoms": [0, 1]})
