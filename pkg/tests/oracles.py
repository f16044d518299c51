"""Independent brute-force reference computations used by the tests.

Everything here loops over triangles in plain Python and recomputes
geometry from vertex coordinates, sharing no code with the package.
"""

import math

import mpmath
import numpy as np


def _tri_data(mesh, t, nodal):
    (x0, y0), (x1, y1), (x2, y2) = (mesh.nodes[k] for k in mesh.triangles[t])
    u0, u1, u2 = (nodal[k] for k in mesh.triangles[t])
    # solve [x1-x0 y1-y0; x2-x0 y2-y0] g = [u1-u0; u2-u0]
    a, b, c, d = x1 - x0, y1 - y0, x2 - x0, y2 - y0
    det = a * d - b * c
    gx = (d * (u1 - u0) - b * (u2 - u0)) / det
    gy = (-c * (u1 - u0) + a * (u2 - u0)) / det
    return abs(det) / 2.0, (gx, gy), (u0, u1, u2)


def full_nodal(mesh, coeffs):
    out = [0.0] * mesh.n_nodes
    for k, node in enumerate(mesh.interior_nodes):
        out[node] = float(coeffs[k])
    return out


def energy(mesh, coeffs, p, f=1.0):
    nodal = full_nodal(mesh, coeffs)
    total = 0.0
    for t in range(mesh.n_triangles):
        area, (gx, gy), (u0, u1, u2) = _tri_data(mesh, t, nodal)
        total += area * math.hypot(gx, gy) ** p / p
        # exact P1 x P1 integral with constant f: area/3 * (u0+u1+u2)
        total -= f * area * (u0 + u1 + u2) / 3.0
    return total


def phi(mesh, u, v, p):
    nu, nv = full_nodal(mesh, u), full_nodal(mesh, v)
    total = 0.0
    for t in range(mesh.n_triangles):
        area, gu, _ = _tri_data(mesh, t, nu)
        _, gv, _ = _tri_data(mesh, t, nv)
        d = math.hypot(gu[0] - gv[0], gu[1] - gv[1])
        if d == 0.0:
            continue
        total += area * (d + math.hypot(*gv)) ** (p - 2.0) * d * d
    return total


def seminorm(mesh, v, s):
    nv = full_nodal(mesh, v)
    total = 0.0
    for t in range(mesh.n_triangles):
        area, g, _ = _tri_data(mesh, t, nv)
        total += area * math.hypot(*g) ** s
    return total ** (1.0 / s)


def bregman_density_mp(a, d, p, dps=50):
    """(|a+d|^p - |a|^p)/p - |a|^(p-2) a.d in high precision."""
    with mpmath.workdps(dps):
        ax, ay = mpmath.mpf(a[0]), mpmath.mpf(a[1])
        dx, dy = mpmath.mpf(d[0]), mpmath.mpf(d[1])
        p = mpmath.mpf(p)
        na = mpmath.sqrt(ax * ax + ay * ay)
        nb = mpmath.sqrt((ax + dx) ** 2 + (ay + dy) ** 2)
        lin = na ** (p - 2) * (ax * dx + ay * dy) if na > 0 else 0
        return float((nb**p - na**p) / p - lin)


def linear_oracle(mesh):
    """Direct solve of the p=2, f=1 system with a stiffness matrix assembled by loops."""
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    n = mesh.n_dofs
    rows, cols, vals = [], [], []
    b = np.zeros(n)
    for t in range(mesh.n_triangles):
        tri = mesh.triangles[t]
        P = mesh.nodes[tri]
        B = np.array([P[1] - P[0], P[2] - P[0]]).T
        area = abs(np.linalg.det(B)) / 2.0
        G = np.linalg.solve(B.T, np.array([[-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]]))
        K = area * G.T @ G
        for a in range(3):
            ia = mesh.interior_index[tri[a]]
            if ia < 0:
                continue
            b[ia] += area / 3.0
            for c in range(3):
                ic = mesh.interior_index[tri[c]]
                if ic >= 0:
                    rows.append(ia)
                    cols.append(ic)
                    vals.append(K[a, c])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return spla.spsolve(A.tocsc(), b)
