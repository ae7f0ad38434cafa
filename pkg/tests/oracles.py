"""Independent reference solvers used only by the tests."""
import numpy as np
from scipy.optimize import minimize, nnls


def _free_projection(basis_free, y, basis_pos):
    # minimise ||y - F a - P t|| over free a and t >= 0 by projecting out span(F)
    q, _ = np.linalg.qr(basis_free)
    resid = lambda v: v - q @ (q.T @ v)  # noqa: E731
    t, _ = nnls(resid(basis_pos), resid(y), maxiter=10_000)
    g_pos = basis_pos @ t
    a, *_ = np.linalg.lstsq(basis_free, y - g_pos, rcond=None)
    return basis_free @ a + g_pos


def monotone_projection(y):
    """Projection onto non-decreasing vectors via NNLS on step functions."""
    y = np.asarray(y, dtype=float)
    n = y.size
    if n == 1:
        return y.copy()
    steps = np.tril(np.ones((n, n)))[:, 1:]
    return _free_projection(np.ones((n, 1)), y, steps)


def convex_projection(x, y):
    """Projection onto convex sequences via NNLS on hinge functions."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    hinges = np.maximum(x[:, None] - x[None, 1:-1], 0.0)
    return _free_projection(np.column_stack((np.ones_like(x), x)), y, hinges)


def lc_objective(t, w, phi):
    """``sum w phi - int exp(phi)`` for piecewise-linear phi on atoms ``t``."""
    from drlogcon.kernels import jfuncs
    return float(w @ phi - np.sum(np.diff(t) * jfuncs(phi[:-1], phi[1:])[0]))


def is_concave(t, phi, tol=0.0):
    slopes = np.diff(phi) / np.diff(t)
    return bool(np.all(np.diff(slopes) <= tol))


def lc_numeric_max(t, w):
    """Concave-constrained maximisation of the log-concave objective by SLSQP."""
    t = np.asarray(t, float)
    w = np.asarray(w, float)
    dt = np.diff(t)
    cons = {"type": "ineq",
            "fun": lambda p: -np.diff(np.diff(p) / dt)}
    start = np.full(t.size, -np.log(t[-1] - t[0]))
    res = minimize(lambda p: -lc_objective(t, w, p), start, constraints=[cons],
                   method="SLSQP", options={"ftol": 1e-14, "maxiter": 2000})
    return res.x, -res.fun
