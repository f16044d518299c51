"""NumPy implementation of the subproblem kernels (fallback for ``_kernels``)."""

import numpy as np

MAX_BACKTRACKS = 60
CONVERGED, MAX_ITERS, NONFINITE, LINESEARCH = 0, 1, 2, 3
_EPS = np.finfo(float).eps


def _delta(A, s, D, p):
    if p == 2.0:
        return 0.5 * s
    if p == 4.0:
        return 0.25 * s * (2.0 * A + s)
    q = 0.5 * p
    pos = A > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        Ap = np.where(pos, A, 1.0)
        x = np.maximum(s / Ap, -1.0)
        val = Ap**q * np.expm1(q * np.log1p(x)) / p
    return np.where(pos, val, D**q / p)


def _eval(w, base, area, dof, dphi, load, p, want_grad):
    wd = np.where(dof >= 0, w[np.maximum(dof, 0)], 0.0)
    d = np.einsum("ea,ead->ed", wd, dphi)
    A = np.einsum("ed,ed->e", base, base)
    D = np.einsum("ed,ed->e", d, d)
    s = 2.0 * np.einsum("ed,ed->e", base, d) + D
    vals = area * _delta(A, s, D, p)
    lw = load * w
    total = np.sum(vals) - np.sum(lw)
    mag = np.sum(np.abs(vals)) + np.sum(np.abs(lw))
    if not want_grad:
        return total, mag, None
    g = base + d
    n2 = np.einsum("ed,ed->e", g, g)
    if p == 2.0:
        c = area.copy()
    elif p == 4.0:
        c = area * n2
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(n2 > 0, area * n2 ** (0.5 * p - 1.0), 0.0)
    contrib = np.einsum("ed,ead->ea", c[:, None] * g, dphi)
    keep = dof >= 0
    grad = np.bincount(dof[keep], weights=contrib[keep], minlength=load.shape[0]) - load
    return total, mag, grad


def objective(w, base, area, dof, dphi, load, p, grad=None):
    """Value of ``F(base + R w) - F(base)`` over the patch; fills ``grad`` if given."""
    w = np.asarray(w, dtype=float)
    total, _, g = _eval(w, base, area, dof, dphi, load, float(p), grad is not None)
    if grad is not None:
        grad[:] = g
    return float(total)


def fista(w0, lower, base, area, dof, dphi, load, p, step, backtrack, grow, tol,
          scale, max_iters, restart, trace=None):
    """Projected FISTA with backtracking and adaptive gradient restart.

    Same contract as the compiled kernel: returns
    ``(w, iterations, status, step, gradmap_norm, evaluations)``.
    """
    p = float(p)
    x = np.array(w0, dtype=float)
    if lower is not None:
        lower = np.asarray(lower, dtype=float)
        np.maximum(x, lower, out=x)
    x_prev = x.copy()
    t, tau = 1.0, float(step)
    it = evals = 0
    gm = 0.0
    status = MAX_ITERS
    while it < max_iters:
        tau_try = tau * grow
        bt = 0
        while True:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * (tau / tau_try) * t * t))
            beta = (t - 1.0) / t_next
            y = x + beta * (x - x_prev)
            fy, mag_y, gy = _eval(y, base, area, dof, dphi, load, p, True)
            xn = y - tau_try * gy
            if lower is not None:
                np.maximum(xn, lower, out=xn)
            fx, mag_x, _ = _eval(xn, base, area, dof, dphi, load, p, False)
            evals += 2
            if not (np.isfinite(fy) and np.isfinite(fx)):
                status = NONFINITE
                break
            diff = xn - y
            lin = gy @ diff
            quad = diff @ diff
            slack = 8.0 * _EPS * (mag_y + mag_x)
            if fx <= fy + lin + quad / (2.0 * tau_try) + slack:
                break
            bt += 1
            if bt > MAX_BACKTRACKS:
                status = LINESEARCH
                break
            tau_try *= backtrack
        if status in (NONFINITE, LINESEARCH):
            break
        if trace is not None and it < trace.shape[0]:
            trace[it] = fx, fy + lin + quad / (2.0 * tau_try) - fx
        tau = tau_try
        gm = np.sqrt(quad) / tau
        step_vec = xn - x
        dn = np.sqrt(step_vec @ step_vec)
        rs = (y - xn) @ step_vec
        x_prev, x = x, xn
        t = t_next
        if restart and rs > 0.0:
            t = 1.0
            x_prev = x.copy()
        it += 1
        if scale * dn < tol:
            status = CONVERGED
            break
    return x, it, status, tau, gm, evals
