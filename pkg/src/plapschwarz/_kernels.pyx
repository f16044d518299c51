# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled subproblem kernels.

Mirrors ``_kernels_py`` operation for operation; the element loop and the
whole FISTA iteration run without the GIL so subdomain solves can overlap.
"""

import numpy as np

from libc.math cimport sqrt, pow, expm1, log1p, fabs, isfinite
from libc.float cimport DBL_EPSILON

cdef enum:
    MAX_BACKTRACKS = 60

cdef enum:
    CONVERGED = 0
    MAX_ITERS = 1
    NONFINITE = 2
    LINESEARCH = 3


cdef inline double _delta(double A, double s, double D, double p, double q) noexcept nogil:
    # (|a+d|^p - |a|^p)/p with A = |a|^2, D = |d|^2, s = |a+d|^2 - |a|^2
    cdef double x
    if p == 2.0:
        return 0.5 * s
    if p == 4.0:
        return 0.25 * s * (2.0 * A + s)
    if A > 0.0:
        x = s / A
        if x < -1.0:
            x = -1.0
        return pow(A, q) * expm1(q * log1p(x)) / p
    return pow(D, q) / p


cdef double _eval(const double[::1] w, const double[:, ::1] base, const double[::1] area,
                  const int[:, ::1] dof, const double[:, :, ::1] dphi,
                  const double[::1] load, double p, double[::1] grad, bint want_grad,
                  double* mag) noexcept nogil:
    cdef Py_ssize_t E = area.shape[0]
    cdef Py_ssize_t n = load.shape[0]
    cdef Py_ssize_t e, i
    cdef int a, k
    cdef double q = 0.5 * p
    cdef double total = 0.0, absum = 0.0
    cdef double ax, ay, dx, dy, gx, gy, A, D, s, val, n2, c, t

    if want_grad:
        for i in range(n):
            grad[i] = -load[i]
    for e in range(E):
        ax = base[e, 0]
        ay = base[e, 1]
        dx = 0.0
        dy = 0.0
        for a in range(3):
            k = dof[e, a]
            if k >= 0:
                dx += w[k] * dphi[e, a, 0]
                dy += w[k] * dphi[e, a, 1]
        A = ax * ax + ay * ay
        D = dx * dx + dy * dy
        s = 2.0 * (ax * dx + ay * dy) + D
        val = area[e] * _delta(A, s, D, p, q)
        total += val
        absum += fabs(val)
        if want_grad:
            gx = ax + dx
            gy = ay + dy
            n2 = gx * gx + gy * gy
            if n2 > 0.0:
                if p == 2.0:
                    c = area[e]
                elif p == 4.0:
                    c = area[e] * n2
                else:
                    c = area[e] * pow(n2, q - 1.0)
                for a in range(3):
                    k = dof[e, a]
                    if k >= 0:
                        grad[k] += c * (gx * dphi[e, a, 0] + gy * dphi[e, a, 1])
    for i in range(n):
        t = load[i] * w[i]
        total -= t
        absum += fabs(t)
    mag[0] = absum
    return total


def objective(w, base, area, dof, dphi, load, double p, grad=None):
    """Value of ``F(base + R w) - F(base)`` over the patch; fills ``grad`` if given."""
    cdef double mag = 0.0
    cdef double val
    cdef double[::1] g
    if grad is None:
        g = np.empty(np.shape(load)[0])
        val = _eval(w, base, area, dof, dphi, load, p, g, False, &mag)
    else:
        g = grad
        val = _eval(w, base, area, dof, dphi, load, p, g, True, &mag)
    return val


cdef inline void _project(double[::1] x, const double[::1] lower, bint has_lower) noexcept nogil:
    cdef Py_ssize_t i
    if has_lower:
        for i in range(x.shape[0]):
            if x[i] < lower[i]:
                x[i] = lower[i]


def fista(w0, lower, base, area, dof, dphi, load, double p, double step,
          double backtrack, double grow, double tol, double scale, long max_iters,
          bint restart, trace=None):
    """Projected FISTA with backtracking and adaptive gradient restart.

    Returns ``(w, iterations, status, step, gradmap_norm, evaluations)``;
    ``status`` is 0 converged, 1 iteration cap, 2 non-finite, 3 line search.
    """
    cdef Py_ssize_t n = np.shape(load)[0]
    cdef double[::1] x = np.array(w0, dtype=np.float64, copy=True)
    cdef double[::1] x_prev = np.empty(n)
    cdef double[::1] y = np.empty(n)
    cdef double[::1] xn = np.empty(n)
    cdef double[::1] gy = np.empty(n)
    cdef double[::1] low
    cdef bint has_lower = lower is not None
    cdef bint has_trace = trace is not None
    cdef double[:, ::1] tr
    cdef const double[:, ::1] bmv = base
    cdef const double[::1] amv = area
    cdef const int[:, ::1] dmv = dof
    cdef const double[:, :, ::1] gmv = dphi
    cdef const double[::1] lmv = load
    cdef double t = 1.0, t_next, tau = step, tau_try, beta, fy, fx, lin, quad
    cdef double mag_y, mag_x, slack, diff, dn2, rs, gm = 0.0
    cdef long it = 0, evals = 0
    cdef int bt, status = MAX_ITERS
    cdef Py_ssize_t i

    if has_lower:
        low = np.ascontiguousarray(lower, dtype=np.float64)
    else:
        low = np.empty(0)
    if has_trace:
        tr = trace
    _project(x, low, has_lower)
    x_prev[:] = x

    with nogil:
        while it < max_iters:
            tau_try = tau * grow
            bt = 0
            while True:
                t_next = 0.5 * (1.0 + sqrt(1.0 + 4.0 * (tau / tau_try) * t * t))
                beta = (t - 1.0) / t_next
                for i in range(n):
                    y[i] = x[i] + beta * (x[i] - x_prev[i])
                fy = _eval(y, bmv, amv, dmv, gmv, lmv, p, gy, True, &mag_y)
                for i in range(n):
                    xn[i] = y[i] - tau_try * gy[i]
                _project(xn, low, has_lower)
                fx = _eval(xn, bmv, amv, dmv, gmv, lmv, p, gy, False, &mag_x)
                evals += 2
                if not (isfinite(fy) and isfinite(fx)):
                    status = NONFINITE
                    break
                lin = 0.0
                quad = 0.0
                for i in range(n):
                    diff = xn[i] - y[i]
                    lin += gy[i] * diff
                    quad += diff * diff
                slack = 8.0 * DBL_EPSILON * (mag_y + mag_x)
                if fx <= fy + lin + quad / (2.0 * tau_try) + slack:
                    break
                bt += 1
                if bt > MAX_BACKTRACKS:
                    status = LINESEARCH
                    break
                tau_try = tau_try * backtrack
            if status == NONFINITE or status == LINESEARCH:
                break
            if has_trace and it < tr.shape[0]:
                tr[it, 0] = fx
                tr[it, 1] = fy + lin + quad / (2.0 * tau_try) - fx
            tau = tau_try
            gm = sqrt(quad) / tau
            dn2 = 0.0
            rs = 0.0
            for i in range(n):
                diff = xn[i] - x[i]
                dn2 += diff * diff
                rs += (y[i] - xn[i]) * diff
            for i in range(n):
                x_prev[i] = x[i]
                x[i] = xn[i]
            t = t_next
            if restart and rs > 0.0:
                t = 1.0
                for i in range(n):
                    x_prev[i] = x[i]
            it += 1
            if scale * sqrt(dn2) < tol:
                status = CONVERGED
                break

    return np.asarray(x), it, status, tau, gm, evals
