"""Pure-Python (numpy) implementations of the numerical kernels.

These are the reference fallbacks for the compiled ``_native`` module and
are selected automatically when the extension is not built. Both backends
expose the same three functions with identical signatures:

``pava(y)``
    Unweighted least-squares isotonic regression.
``convex_lse_solve(x, y, tol, max_iter)``
    Convex least-squares regression by support reduction.
``logconcave_solve(t, w, tol, max_iter)``
    Weighted log-concave MLE by an active-set method.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solveh_banded

SERIES_CUTOFF = 0.1
_SERIES_TERMS = 10


class KernelConvergenceError(RuntimeError):
    """Raised when an iterative kernel exceeds its iteration cap."""


# ---------------------------------------------------------------------------
# isotonic regression


def pava(y):
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    sums = np.empty(n)
    counts = np.empty(n, dtype=np.int64)
    top = -1
    for v in y:
        top += 1
        sums[top] = v
        counts[top] = 1
        while top > 0 and sums[top - 1] * counts[top] > sums[top] * counts[top - 1]:
            sums[top - 1] += sums[top]
            counts[top - 1] += counts[top]
            top -= 1
    out = np.empty(n)
    pos = 0
    for b in range(top + 1):
        c = counts[b]
        out[pos:pos + c] = y[pos] if c == 1 else sums[b] / c
        pos += c
    # guard against one-ulp inversions between rounded block means
    return np.maximum.accumulate(out)


# ---------------------------------------------------------------------------
# shared helpers


def _solve_tridiag_spd(diag, off, rhs):
    if diag.shape[0] == 1:
        return rhs / diag
    ab = np.empty((2, diag.shape[0]))
    ab[0, 0] = 0.0
    ab[0, 1:] = off
    ab[1] = diag
    return solveh_banded(ab, rhs, check_finite=False)


def _segment_coordinates(x, xk):
    seg = np.searchsorted(xk, x, side="right") - 1
    np.clip(seg, 0, xk.shape[0] - 2, out=seg)
    lam = (x - xk[seg]) / (xk[seg + 1] - xk[seg])
    return seg, lam


def _kinks(xk, vals):
    slopes = np.diff(vals) / np.diff(xk)
    return np.diff(slopes)


# ---------------------------------------------------------------------------
# convex regression


def _spline_lsq(x, y, knots):
    xk = x[knots]
    kk = knots.shape[0]
    seg, lam = _segment_coordinates(x, xk)
    one_m = 1.0 - lam
    diag = (np.bincount(seg, one_m * one_m, minlength=kk)
            + np.bincount(seg + 1, lam * lam, minlength=kk))
    off = np.bincount(seg, one_m * lam, minlength=kk - 1)[: kk - 1]
    rhs = (np.bincount(seg, one_m * y, minlength=kk)
           + np.bincount(seg + 1, lam * y, minlength=kk))
    eta = _solve_tridiag_spd(diag, off, rhs)
    fitted = one_m * eta[seg] + lam * eta[seg + 1]
    return eta, fitted


def _hinge_norms(x):
    # ||(x - x_j)_+||_2 over the design, for every j
    n = x.shape[0]
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    cnt = np.zeros(n)
    for j in range(n - 2, -1, -1):
        dx = x[j + 1] - x[j]
        s2[j] = s2[j + 1] + 2.0 * dx * s1[j + 1] + (cnt[j + 1] + 1.0) * dx * dx
        s1[j] = s1[j + 1] + (cnt[j + 1] + 1.0) * dx
        cnt[j] = cnt[j + 1] + 1.0
    return np.sqrt(s2)


def _hinge_derivatives(x, resid):
    # d_j = sum_{i>j} (x_i - x_j) * resid_i via a backward recursion
    tail = np.concatenate((np.cumsum(resid[::-1])[::-1][1:], [0.0]))
    steps = np.diff(x) * tail[:-1]
    d = np.concatenate((np.cumsum(steps[::-1])[::-1], [0.0]))
    return d


def convex_lse_solve(x, y, tol=1e-10, max_iter=10000):
    """Project ``y`` onto convex sequences over the design ``x``.

    Returns ``(fitted, knot_index, iterations)`` where ``knot_index`` lists
    the support of the hinge representation, endpoints included.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    knots = np.array([0, n - 1], dtype=np.int64)
    eta, fitted = _spline_lsq(x, y, knots)
    norms = _hinge_norms(x)
    norms[norms == 0.0] = np.inf
    threshold = tol * max(1.0, float(np.linalg.norm(y)))
    interior = np.zeros(n, dtype=bool)
    interior[1:n - 1] = True
    for it in range(max_iter):
        d = _hinge_derivatives(x, fitted - y) / norms
        cand = interior.copy()
        cand[knots] = False
        if not cand.any():
            return fitted, knots, it
        d[~cand] = np.inf
        j = int(np.argmin(d))
        if d[j] >= -threshold:
            return fitted, knots, it
        pos = int(np.searchsorted(knots, j))
        new_knots = np.insert(knots, pos, j)
        cur = fitted[new_knots]
        while True:
            eta_new, fitted_new = _spline_lsq(x, y, new_knots)
            xk = x[new_knots]
            th_new = _kinks(xk, eta_new)
            bad = th_new < 0.0
            if not bad.any():
                break
            th_cur = np.maximum(_kinks(xk, cur), 0.0)
            ratio = np.full(th_new.shape, np.inf)
            ratio[bad] = th_cur[bad] / (th_cur[bad] - th_new[bad])
            k = int(np.argmin(ratio))
            step = ratio[k]
            cur = cur + step * (eta_new - cur)
            new_knots = np.delete(new_knots, k + 1)
            cur = np.delete(cur, k + 1)
        knots = new_knots
        fitted = fitted_new
    raise KernelConvergenceError(
        f"convex regression did not converge in {max_iter} iterations")


# ---------------------------------------------------------------------------
# log-concave MLE


def _series(d, k, l):
    # sum_r d^r / r! * int_0^1 u^(k+r) (1-u)^l du
    coef = [math.factorial(k + r) * math.factorial(l) / math.factorial(k + r + l + 1)
            / math.factorial(r) for r in range(_SERIES_TERMS)]
    out = np.full_like(d, coef[-1])
    for c in coef[-2::-1]:
        out = out * d + c
    return out


def _jfuncs_anchored(top, d):
    """J-integrals anchored at the larger endpoint; ``d <= 0``."""
    base = np.exp(top)
    small = np.abs(d) < SERIES_CUTOFF
    ds = np.where(small, 1.0, d)
    ed = np.exp(ds)
    em1 = np.expm1(ds)
    j00 = np.where(small, _series(d, 0, 0), em1 / ds)
    j10 = np.where(small, _series(d, 0, 1), (em1 - ds) / ds**2)
    j01 = np.where(small, _series(d, 1, 0), (ed * (ds - 1.0) + 1.0) / ds**2)
    j20 = np.where(small, _series(d, 0, 2), 2.0 * (em1 - ds - 0.5 * ds * ds) / ds**3)
    j11 = np.where(small, _series(d, 1, 1), (ed * (ds - 2.0) + ds + 2.0) / ds**3)
    j02 = np.where(small, _series(d, 2, 0), (ed * (ds * ds - 2.0 * ds + 2.0) - 2.0) / ds**3)
    return base * j00, base * j10, base * j01, base * j20, base * j11, base * j02


def jfuncs(a, b):
    """Integrals int_0^1 u^k (1-u)^l exp((1-u) a + u b) du for k + l <= 2.

    Returns ``(J, J10, J01, J20, J11, J02)`` where ``Jpq`` carries weight
    ``(1-u)^p u^q``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    swap = b > a
    top = np.where(swap, b, a)
    d = np.where(swap, a - b, b - a)
    j00, j10, j01, j20, j11, j02 = _jfuncs_anchored(top, d)
    return (j00, np.where(swap, j01, j10), np.where(swap, j10, j01),
            np.where(swap, j02, j20), j11, np.where(swap, j20, j02))


def _aggregate_weights(t, w, knots):
    tk = t[knots]
    kk = knots.shape[0]
    seg, lam = _segment_coordinates(t, tk)
    return (np.bincount(seg, w * (1.0 - lam), minlength=kk)
            + np.bincount(seg + 1, w * lam, minlength=kk))


def _lc_objective(c, dk, eta):
    j00 = jfuncs(eta[:-1], eta[1:])[0]
    return float(c @ eta - np.sum(dk * j00))


def _lc_newton(tk, c, eta, max_steps=100):
    dk = np.diff(tk)
    eta = eta.copy()
    for _ in range(max_steps):
        j00, j10, j01, j20, j11, j02 = jfuncs(eta[:-1], eta[1:])
        grad = c.copy()
        grad[:-1] -= dk * j10
        grad[1:] -= dk * j01
        diag = np.zeros_like(eta)
        diag[:-1] += dk * j20
        diag[1:] += dk * j02
        step = _solve_tridiag_spd(diag, dk * j11, grad)
        dec = float(grad @ step)
        if dec < 1e-20:
            return eta + step
        base = float(c @ eta - np.sum(dk * j00))
        lam = 1.0
        while lam > 1e-12:
            trial = eta + lam * step
            if _lc_objective(c, dk, trial) >= base:
                break
            lam *= 0.5
        else:
            return eta
        eta = trial
    return eta


def _lc_dirderiv(t, w, phi):
    # H_j = int_{t_1}^{t_j} (F_hat - W) for the kink direction min(x - t_j, 0)
    dt = np.diff(t)
    j00, j10 = jfuncs(phi[:-1], phi[1:])[:2]
    fcdf = np.concatenate(([0.0], np.cumsum(dt * j00)))
    int_f = np.concatenate(([0.0], np.cumsum(dt * fcdf[:-1] + dt * dt * j10)))
    wcdf = np.cumsum(w)
    int_w = np.concatenate(([0.0], np.cumsum(dt * wcdf[:-1])))
    return int_f - int_w


def logconcave_solve(t, w, tol=1e-8, max_iter=1000):
    """Maximise sum_i w_i phi(t_i) - int exp(phi) over concave phi.

    Returns ``(phi, knot_index, iterations)`` with ``phi`` evaluated at
    every atom and ``knot_index`` the active knots, endpoints included.
    """
    t = np.asarray(t, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    m = t.shape[0]
    knots = np.array([0, m - 1], dtype=np.int64)
    eta = np.full(2, -math.log(t[-1] - t[0]))
    eta = _lc_newton(t[knots], _aggregate_weights(t, w, knots), eta)
    tabu = set()
    for it in range(max_iter):
        phi = np.interp(t, t[knots], eta)
        h = _lc_dirderiv(t, w, phi)
        h[knots] = -np.inf
        for j in tabu:
            h[j] = -np.inf
        j = int(np.argmax(h))
        if h[j] <= tol:
            return phi, knots, it
        pos = int(np.searchsorted(knots, j))
        new_knots = np.insert(knots, pos, j)
        cur = phi[new_knots]
        while True:
            tk = t[new_knots]
            eta_new = _lc_newton(tk, _aggregate_weights(t, w, new_knots), cur)
            kink_new = _kinks(tk, eta_new)
            bad = kink_new > 0.0
            if not bad.any():
                break
            kink_cur = np.minimum(_kinks(tk, cur), 0.0)
            ratio = np.full(kink_new.shape, np.inf)
            ratio[bad] = kink_cur[bad] / (kink_cur[bad] - kink_new[bad])
            k = int(np.argmin(ratio))
            cur = cur + ratio[k] * (eta_new - cur)
            new_knots = np.delete(new_knots, k + 1)
            cur = np.delete(cur, k + 1)
        if np.array_equal(new_knots, knots):
            # the candidate knot was rejected without progress
            tabu.add(j)
            continue
        tabu.clear()
        knots = new_knots
        eta = eta_new
    raise KernelConvergenceError(
        f"log-concave active set did not converge in {max_iter} iterations")
