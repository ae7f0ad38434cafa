# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: PAVA, convex regression, weighted log-concave MLE.

Algorithms mirror :mod:`drlogcon._pykernels` step for step so the two
backends agree to rounding error.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, log, sqrt, fabs, INFINITY
from libc.stdlib cimport malloc, free
from libc.string cimport memmove

cnp.import_array()

from ._pykernels import KernelConvergenceError

cdef enum:
    SERIES_TERMS = 10
cdef double SERIES_CUTOFF = 0.1
cdef double COEF[6][SERIES_TERMS]


cdef double _fact(int k):
    cdef double r = 1.0
    cdef int i
    for i in range(2, k + 1):
        r *= i
    return r


cdef void _init_coef():
    # order: (k, l) = (0,0), (0,1), (1,0), (0,2), (1,1), (2,0)
    cdef int ks[6]
    cdef int ls[6]
    ks[:] = [0, 0, 1, 0, 1, 2]
    ls[:] = [0, 1, 0, 2, 1, 0]
    cdef int q, r
    for q in range(6):
        for r in range(SERIES_TERMS):
            COEF[q][r] = (_fact(ks[q] + r) * _fact(ls[q])
                          / _fact(ks[q] + r + ls[q] + 1) / _fact(r))


_init_coef()


cdef inline double _series(double d, int q) nogil:
    cdef double out = COEF[q][SERIES_TERMS - 1]
    cdef int r
    for r in range(SERIES_TERMS - 2, -1, -1):
        out = out * d + COEF[q][r]
    return out


cdef void _jfuncs(double a, double b, double* out) nogil:
    """out = (J, J10, J01, J20, J11, J02) of the segment (a, b)."""
    cdef double top, d, base, ed, em1, d2, d3
    cdef double j00, j10, j01, j20, j11, j02
    cdef bint swap = b > a
    if swap:
        top = b
        d = a - b
    else:
        top = a
        d = b - a
    base = exp(top)
    if fabs(d) < SERIES_CUTOFF:
        j00 = _series(d, 0)
        j10 = _series(d, 1)
        j01 = _series(d, 2)
        j20 = _series(d, 3)
        j11 = _series(d, 4)
        j02 = _series(d, 5)
    else:
        ed = exp(d)
        em1 = expm1(d)
        d2 = d * d
        d3 = d2 * d
        j00 = em1 / d
        j10 = (em1 - d) / d2
        j01 = (ed * (d - 1.0) + 1.0) / d2
        j20 = 2.0 * (em1 - d - 0.5 * d2) / d3
        j11 = (ed * (d - 2.0) + d + 2.0) / d3
        j02 = (ed * (d2 - 2.0 * d + 2.0) - 2.0) / d3
    out[0] = base * j00
    out[4] = base * j11
    if swap:
        out[1] = base * j01
        out[2] = base * j10
        out[3] = base * j02
        out[5] = base * j20
    else:
        out[1] = base * j10
        out[2] = base * j01
        out[3] = base * j20
        out[5] = base * j02


cdef inline double _j00(double a, double b) nogil:
    cdef double top, d
    if b > a:
        top = b
        d = a - b
    else:
        top = a
        d = b - a
    if fabs(d) < SERIES_CUTOFF:
        return exp(top) * _series(d, 0)
    return exp(top) * expm1(d) / d


def jfuncs(a, b):
    """Vectorised wrapper used for cross-backend testing."""
    a_arr, b_arr = np.broadcast_arrays(np.asarray(a, dtype=np.float64),
                                       np.asarray(b, dtype=np.float64))
    shape = a_arr.shape
    cdef const double[::1] av = np.ascontiguousarray(a_arr).ravel()
    cdef const double[::1] bv = np.ascontiguousarray(b_arr).ravel()
    cdef Py_ssize_t n = av.shape[0], i
    out = np.empty((6, n))
    cdef double[:, ::1] ov = out
    cdef double buf[6]
    for i in range(n):
        _jfuncs(av[i], bv[i], buf)
        for q in range(6):
            ov[q, i] = buf[q]
    return tuple(row.reshape(shape) for row in out)


# ---------------------------------------------------------------------------
# isotonic regression


def pava(y):
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0]
    out = np.empty(n)
    cdef double[::1] ov = out
    cdef double* sums = <double*> malloc(max(n, 1) * sizeof(double))
    cdef Py_ssize_t* counts = <Py_ssize_t*> malloc(max(n, 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t top = -1, i, b, pos, c
    cdef double mean
    with nogil:
        for i in range(n):
            top += 1
            sums[top] = yv[i]
            counts[top] = 1
            while top > 0 and sums[top - 1] * counts[top] > sums[top] * counts[top - 1]:
                sums[top - 1] += sums[top]
                counts[top - 1] += counts[top]
                top -= 1
        pos = 0
        for b in range(top + 1):
            c = counts[b]
            if c == 1:
                mean = yv[pos]
            else:
                mean = sums[b] / c
            for i in range(pos, pos + c):
                ov[i] = mean
            pos += c
        # guard against one-ulp inversions between rounded block means
        for i in range(1, n):
            if ov[i] < ov[i - 1]:
                ov[i] = ov[i - 1]
    free(sums)
    free(counts)
    return out


# ---------------------------------------------------------------------------
# tridiagonal SPD solve (Thomas); diag/rhs overwritten, solution in rhs


cdef void _thomas(double* diag, double* off, double* rhs, Py_ssize_t k) nogil:
    cdef Py_ssize_t i
    cdef double f
    for i in range(1, k):
        f = off[i - 1] / diag[i - 1]
        diag[i] -= f * off[i - 1]
        rhs[i] -= f * rhs[i - 1]
    rhs[k - 1] /= diag[k - 1]
    for i in range(k - 2, -1, -1):
        rhs[i] = (rhs[i] - off[i] * rhs[i + 1]) / diag[i]


cdef void _kinks(const double* xk, const double* vals, Py_ssize_t k, double* out) nogil:
    cdef Py_ssize_t i
    cdef double s_prev = (vals[1] - vals[0]) / (xk[1] - xk[0]), s_next
    for i in range(1, k - 1):
        s_next = (vals[i + 1] - vals[i]) / (xk[i + 1] - xk[i])
        out[i - 1] = s_next - s_prev
        s_prev = s_next


# ---------------------------------------------------------------------------
# convex regression


cdef void _spline_lsq(const double* x, const double* y, Py_ssize_t n,
                      const Py_ssize_t* knots, Py_ssize_t k,
                      double* eta, double* fitted,
                      double* diag, double* off) nogil:
    cdef Py_ssize_t j, i, lo, hi
    cdef double x0, h, lam, om
    for j in range(k):
        diag[j] = 0.0
        eta[j] = 0.0
    for j in range(k - 1):
        off[j] = 0.0
    for j in range(k - 1):
        lo = knots[j]
        hi = knots[j + 1] if j < k - 2 else n
        x0 = x[knots[j]]
        h = x[knots[j + 1]] - x0
        for i in range(lo, hi):
            lam = (x[i] - x0) / h
            om = 1.0 - lam
            diag[j] += om * om
            diag[j + 1] += lam * lam
            off[j] += om * lam
            eta[j] += om * y[i]
            eta[j + 1] += lam * y[i]
    _thomas(diag, off, eta, k)
    for j in range(k - 1):
        lo = knots[j]
        hi = knots[j + 1] if j < k - 2 else n
        x0 = x[knots[j]]
        h = x[knots[j + 1]] - x0
        for i in range(lo, hi):
            lam = (x[i] - x0) / h
            fitted[i] = (1.0 - lam) * eta[j] + lam * eta[j + 1]


def convex_lse_solve(x, y, double tol=1e-10, Py_ssize_t max_iter=10000):
    """Project ``y`` onto convex sequences over the design ``x``.

    Returns ``(fitted, knot_index, iterations)``.
    """
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    fitted_arr = np.empty(n)
    cdef double[::1] fitted = fitted_arr
    cdef double[::1] fnew = np.empty(n)
    cdef double[::1] norms = np.empty(n)
    cdef double[::1] dd = np.empty(n)
    cdef Py_ssize_t[::1] knots = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] nk = np.empty(n, dtype=np.intp)
    cdef double[::1] eta = np.empty(n)
    cdef double[::1] cur = np.empty(n)
    cdef double[::1] diag = np.empty(n)
    cdef double[::1] off = np.empty(n)
    cdef double[::1] xk = np.empty(n)
    cdef double[::1] th_new = np.empty(n)
    cdef double[::1] th_cur = np.empty(n)
    cdef char[::1] is_knot = np.zeros(n, dtype=np.int8)
    cdef Py_ssize_t k = 2, kn, it, i, j, best, pos, kmin
    cdef double s1, s2, cnt, dx, tail, acc, val, threshold, ynorm = 0.0
    cdef double rmin, r, step
    cdef bint bad, converged = False

    for i in range(n):
        ynorm += yv[i] * yv[i]
    threshold = tol * max(1.0, sqrt(ynorm))
    with nogil:
        # hinge norms ||(x - x_j)_+||
        s1 = 0.0
        s2 = 0.0
        cnt = 0.0
        norms[n - 1] = 0.0
        for j in range(n - 2, -1, -1):
            dx = xv[j + 1] - xv[j]
            s2 = s2 + 2.0 * dx * s1 + (cnt + 1.0) * dx * dx
            s1 = s1 + (cnt + 1.0) * dx
            cnt = cnt + 1.0
            norms[j] = sqrt(s2)
        knots[0] = 0
        knots[1] = n - 1
        is_knot[0] = 1
        is_knot[n - 1] = 1
        _spline_lsq(&xv[0], &yv[0], n, &knots[0], k, &eta[0], &fitted[0],
                    &diag[0], &off[0])
        it = 0
        while it < max_iter:
            # normalised directional derivatives along hinges
            tail = 0.0
            acc = 0.0
            best = -1
            rmin = INFINITY
            for j in range(n - 2, 0, -1):
                tail += fitted[j + 1] - yv[j + 1]
                acc += (xv[j + 1] - xv[j]) * tail
                if not is_knot[j] and norms[j] > 0.0:
                    val = acc / norms[j]
                    if val < rmin:
                        rmin = val
                        best = j
            if best < 0 or rmin >= -threshold:
                converged = True
                break
            it += 1
            # insert knot
            pos = 0
            while knots[pos] < best:
                pos += 1
            for i in range(pos):
                nk[i] = knots[i]
            nk[pos] = best
            for i in range(pos, k):
                nk[i + 1] = knots[i]
            kn = k + 1
            for i in range(kn):
                cur[i] = fitted[nk[i]]
            while True:
                _spline_lsq(&xv[0], &yv[0], n, &nk[0], kn, &eta[0], &fnew[0],
                            &diag[0], &off[0])
                for i in range(kn):
                    xk[i] = xv[nk[i]]
                _kinks(&xk[0], &eta[0], kn, &th_new[0])
                bad = False
                for i in range(kn - 2):
                    if th_new[i] < 0.0:
                        bad = True
                        break
                if not bad:
                    break
                _kinks(&xk[0], &cur[0], kn, &th_cur[0])
                step = INFINITY
                kmin = -1
                for i in range(kn - 2):
                    if th_new[i] < 0.0:
                        if th_cur[i] < 0.0:
                            th_cur[i] = 0.0
                        r = th_cur[i] / (th_cur[i] - th_new[i])
                        if r < step:
                            step = r
                            kmin = i
                for i in range(kn):
                    cur[i] = cur[i] + step * (eta[i] - cur[i])
                for i in range(kmin + 1, kn - 1):
                    nk[i] = nk[i + 1]
                    cur[i] = cur[i + 1]
                kn -= 1
            for i in range(k):
                is_knot[knots[i]] = 0
            for i in range(kn):
                knots[i] = nk[i]
                is_knot[knots[i]] = 1
            k = kn
            for i in range(n):
                fitted[i] = fnew[i]
    if not converged:
        raise KernelConvergenceError(
            f"convex regression did not converge in {max_iter} iterations")
    return fitted_arr, np.asarray(knots[:k], dtype=np.int64).copy(), it


# ---------------------------------------------------------------------------
# log-concave MLE


cdef void _aggregate(const double* t, const double* w, Py_ssize_t m,
                     const Py_ssize_t* knots, Py_ssize_t k, double* c) nogil:
    cdef Py_ssize_t j, i, lo, hi
    cdef double t0, h, lam
    for j in range(k):
        c[j] = 0.0
    for j in range(k - 1):
        lo = knots[j]
        hi = knots[j + 1] if j < k - 2 else m
        t0 = t[knots[j]]
        h = t[knots[j + 1]] - t0
        for i in range(lo, hi):
            lam = (t[i] - t0) / h
            c[j] += w[i] * (1.0 - lam)
            c[j + 1] += w[i] * lam


cdef double _lc_obj(const double* c, const double* tk, const double* eta,
                    Py_ssize_t k) nogil:
    cdef double s = 0.0
    cdef Py_ssize_t j
    for j in range(k):
        s += c[j] * eta[j]
    for j in range(k - 1):
        s -= (tk[j + 1] - tk[j]) * _j00(eta[j], eta[j + 1])
    return s


cdef void _lc_newton(const double* tk, const double* c, double* eta, Py_ssize_t k,
                     double* grad, double* diag, double* off, double* trial) nogil:
    cdef double buf[6]
    cdef double dk, dec, base, lam
    cdef Py_ssize_t it, j
    cdef bint accepted
    for it in range(100):
        for j in range(k):
            grad[j] = c[j]
            diag[j] = 0.0
        for j in range(k - 1):
            dk = tk[j + 1] - tk[j]
            _jfuncs(eta[j], eta[j + 1], buf)
            grad[j] -= dk * buf[1]
            grad[j + 1] -= dk * buf[2]
            diag[j] += dk * buf[3]
            diag[j + 1] += dk * buf[5]
            off[j] = dk * buf[4]
        for j in range(k):
            trial[j] = grad[j]
        _thomas(diag, off, trial, k)
        # trial now holds the Newton step
        dec = 0.0
        for j in range(k):
            dec += grad[j] * trial[j]
        if dec < 1e-20:
            for j in range(k):
                eta[j] += trial[j]
            return
        for j in range(k):
            grad[j] = trial[j]
        base = _lc_obj(c, tk, eta, k)
        lam = 1.0
        accepted = False
        while lam > 1e-12:
            for j in range(k):
                trial[j] = eta[j] + lam * grad[j]
            if _lc_obj(c, tk, trial, k) >= base:
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            return
        for j in range(k):
            eta[j] = trial[j]


def logconcave_solve(t, w, double tol=1e-8, Py_ssize_t max_iter=1000):
    """Maximise sum_i w_i phi(t_i) - int exp(phi) over concave phi.

    Returns ``(phi, knot_index, iterations)``.
    """
    cdef const double[::1] tv = np.ascontiguousarray(t, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t m = tv.shape[0]
    phi_arr = np.empty(m)
    cdef double[::1] phi = phi_arr
    cdef double[::1] h = np.empty(m)
    cdef Py_ssize_t[::1] knots = np.empty(m, dtype=np.intp)
    cdef Py_ssize_t[::1] nk = np.empty(m, dtype=np.intp)
    cdef double[::1] eta = np.empty(m)
    cdef double[::1] enew = np.empty(m)
    cdef double[::1] cur = np.empty(m)
    cdef double[::1] c = np.empty(m)
    cdef double[::1] tk = np.empty(m)
    cdef double[::1] grad = np.empty(m)
    cdef double[::1] diag = np.empty(m)
    cdef double[::1] off = np.empty(m)
    cdef double[::1] trial = np.empty(m)
    cdef double[::1] kn_new = np.empty(m)
    cdef double[::1] kn_cur = np.empty(m)
    cdef char[::1] blocked = np.zeros(m, dtype=np.int8)
    cdef Py_ssize_t k = 2, kn, it, i, j, best, pos, kmin, seg
    cdef double buf[6]
    cdef double dt, fc, intf, wc, intw, hmax, step, r, lam
    cdef bint bad, converged = False, same

    with nogil:
        knots[0] = 0
        knots[1] = m - 1
        eta[0] = -log(tv[m - 1] - tv[0])
        eta[1] = eta[0]
        _aggregate(&tv[0], &wv[0], m, &knots[0], k, &c[0])
        tk[0] = tv[0]
        tk[1] = tv[m - 1]
        _lc_newton(&tk[0], &c[0], &eta[0], k, &grad[0], &diag[0], &off[0], &trial[0])
        it = 0
        while it < max_iter:
            # phi on atoms by linear interpolation between knots
            seg = 0
            for i in range(m):
                while seg < k - 2 and i >= knots[seg + 1]:
                    seg += 1
                lam = (tv[i] - tv[knots[seg]]) / (tv[knots[seg + 1]] - tv[knots[seg]])
                phi[i] = (1.0 - lam) * eta[seg] + lam * eta[seg + 1]
            # directional derivatives H_j = int (F_hat - W)
            fc = 0.0
            intf = 0.0
            wc = 0.0
            intw = 0.0
            hmax = -INFINITY
            best = -1
            seg = 0
            for i in range(m - 1):
                dt = tv[i + 1] - tv[i]
                _jfuncs(phi[i], phi[i + 1], buf)
                wc += wv[i]
                intf += dt * fc + dt * dt * buf[1]
                intw += dt * wc
                fc += dt * buf[0]
                j = i + 1
                while seg < k and knots[seg] < j:
                    seg += 1
                if j < m - 1 and knots[seg] != j and not blocked[j]:
                    if intf - intw > hmax:
                        hmax = intf - intw
                        best = j
            if best < 0 or hmax <= tol:
                converged = True
                break
            it += 1
            pos = 0
            while knots[pos] < best:
                pos += 1
            for i in range(pos):
                nk[i] = knots[i]
            nk[pos] = best
            for i in range(pos, k):
                nk[i + 1] = knots[i]
            kn = k + 1
            for i in range(kn):
                cur[i] = phi[nk[i]]
            while True:
                for i in range(kn):
                    tk[i] = tv[nk[i]]
                    enew[i] = cur[i]
                _aggregate(&tv[0], &wv[0], m, &nk[0], kn, &c[0])
                _lc_newton(&tk[0], &c[0], &enew[0], kn, &grad[0], &diag[0],
                           &off[0], &trial[0])
                _kinks(&tk[0], &enew[0], kn, &kn_new[0])
                bad = False
                for i in range(kn - 2):
                    if kn_new[i] > 0.0:
                        bad = True
                        break
                if not bad:
                    break
                _kinks(&tk[0], &cur[0], kn, &kn_cur[0])
                step = INFINITY
                kmin = -1
                for i in range(kn - 2):
                    if kn_new[i] > 0.0:
                        if kn_cur[i] > 0.0:
                            kn_cur[i] = 0.0
                        r = kn_cur[i] / (kn_cur[i] - kn_new[i])
                        if r < step:
                            step = r
                            kmin = i
                for i in range(kn):
                    cur[i] = cur[i] + step * (enew[i] - cur[i])
                for i in range(kmin + 1, kn - 1):
                    nk[i] = nk[i + 1]
                    cur[i] = cur[i + 1]
                kn -= 1
            same = kn == k
            if same:
                for i in range(k):
                    if nk[i] != knots[i]:
                        same = False
                        break
            if same:
                # the candidate knot was rejected without progress
                blocked[best] = 1
                continue
            for i in range(m):
                blocked[i] = 0
            for i in range(kn):
                knots[i] = nk[i]
                eta[i] = enew[i]
            k = kn
    if not converged:
        raise KernelConvergenceError(
            f"log-concave active set did not converge in {max_iter} iterations")
    return phi_arr, np.asarray(knots[:k], dtype=np.int64).copy(), it
