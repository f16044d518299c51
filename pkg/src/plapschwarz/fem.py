"""p-Laplace energy, its derivative, Bregman distance and the distance-like function.

All P1 gradients are constant per triangle, so every integral except the load
term is an exact per-element sum.  The load term uses the exact P1 mass rule
with ``f`` stored as nodal values.  Sums run in triangle-index order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .mesh import FeFunction, Mesh

__all__ = [
    "FeFunction",
    "ProblemData",
    "mass_matrix",
    "stiffness_matrix",
    "element_gradient",
    "element_gradients",
    "flux",
    "energy",
    "grad_energy",
    "bregman",
    "phi",
    "seminorm",
    "bregman_density",
    "phi_density",
]


@dataclass(frozen=True, eq=False)
class ProblemData:
    """Exponent ``p`` and source ``f`` (a constant or nodal values on all mesh nodes)."""

    p: float
    f: float | np.ndarray = 1.0
    _loads: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if not self.p > 1.0:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if not np.isscalar(self.f):
            object.__setattr__(self, "f", np.asarray(self.f, dtype=float))

    @property
    def p_low(self):
        return min(self.p, 2.0)

    @property
    def p_high(self):
        return max(self.p, 2.0)

    @property
    def p_hat(self):
        return abs(self.p - 2.0)

    def f_nodal(self, mesh: Mesh):
        if np.isscalar(self.f):
            return np.full(mesh.n_nodes, float(self.f))
        if self.f.shape != (mesh.n_nodes,):
            raise ValueError("nodal source does not match the mesh")
        return self.f

    def load(self, mesh: Mesh):
        """Vector of ``int f phi_i`` over interior hats (cached per mesh)."""
        key = id(mesh)
        hit = self._loads.get(key)
        if hit is None or hit[0] is not mesh:
            b = mass_matrix(mesh, interior=False) @ self.f_nodal(mesh)
            hit = (mesh, b[mesh.interior_nodes].copy())
            self._loads[key] = hit
        return hit[1]


def _assemble(mesh: Mesh, local, interior):
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    A = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2)
    A.sum_duplicates()
    if interior:
        idx = mesh.interior_nodes
        A = A[idx][:, idx].tocsr()
    return A


def mass_matrix(mesh: Mesh, interior=True):
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = mesh.areas[:, None, None] * ref
    return _assemble(mesh, local, interior)


def stiffness_matrix(mesh: Mesh, interior=True):
    G = mesh.basis_gradients
    local = mesh.areas[:, None, None] * np.einsum("tad,tbd->tab", G, G)
    return _assemble(mesh, local, interior)


def element_gradients(mesh: Mesh, coeffs):
    """Per-triangle gradients ``(..., T, 2)`` for coefficient arrays ``(..., n_dofs)``."""
    vals = mesh.full(coeffs)[..., mesh.triangles]
    return np.einsum("...ta,tad->...td", vals, mesh.basis_gradients)


def element_gradient(v: FeFunction, t: int):
    mesh = v.mesh
    if not 0 <= t < mesh.n_triangles:
        raise IndexError(f"triangle {t} out of range [0, {mesh.n_triangles})")
    vals = v.nodal()[mesh.triangles[t]]
    return vals @ mesh.basis_gradients[t]


def flux(g, p):
    """``|g|^(p-2) g`` row-wise, extended by 0 at ``g = 0``."""
    n = np.sqrt(np.einsum("...d,...d->...", g, g))
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(n > 0, n ** (p - 2.0), 0.0)
    return w[..., None] * g


def energy(v: FeFunction, data: ProblemData) -> float:
    mesh = v.mesh
    g = element_gradients(mesh, v.coeffs)
    n2 = np.einsum("td,td->t", g, g)
    grad_term = np.sum(mesh.areas * n2 ** (data.p / 2.0)) / data.p
    return float(grad_term - data.load(mesh) @ v.coeffs)


def grad_energy(v: FeFunction, data: ProblemData):
    """Entries ``<F'(v), phi_i>`` for every interior hat ``phi_i``."""
    mesh = v.mesh
    g = element_gradients(mesh, v.coeffs)
    q = mesh.areas[:, None] * flux(g, data.p)
    contrib = np.einsum("td,tad->ta", q, mesh.basis_gradients)
    dofs = mesh.element_dofs.ravel()
    keep = dofs >= 0
    out = np.bincount(dofs[keep], weights=contrib.ravel()[keep], minlength=mesh.n_dofs)
    return out - data.load(mesh)


# Taylor coefficients of (1+x)^q - 1 - q x, used where cancellation would bite.
_SERIES_TERMS = 12
_SERIES_CUTOFF = 1e-2


def _excess_power(x, q):
    """``(1+x)^q - 1 - q x`` for ``x >= -1`` without cancellation near 0."""
    x = np.maximum(x, -1.0)
    with np.errstate(divide="ignore"):
        direct = np.expm1(q * np.log1p(x)) - q * x
    small = np.abs(x) < _SERIES_CUTOFF
    if np.any(small):
        xs = np.where(small, x, 0.0)
        coef = q * (q - 1.0) / 2.0
        term = coef * xs * xs
        series = term.copy()
        for k in range(3, _SERIES_TERMS + 1):
            term = term * xs * (q - k + 1.0) / k
            series += term
        direct = np.where(small, series, direct)
    return direct


def bregman_density(ga, gd, p):
    """Per-element ``(|a+d|^p - |a|^p)/p - |a|^(p-2) a.d`` for gradient arrays ``a``, ``d``."""
    A = np.einsum("...d,...d->...", ga, ga)
    D = np.einsum("...d,...d->...", gd, gd)
    s = 2.0 * np.einsum("...d,...d->...", ga, gd) + D
    q = p / 2.0
    pos = A > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        Ap = np.where(pos, A, 1.0)
        val = Ap**q * _excess_power(s / Ap, q) / p + Ap ** (q - 1.0) * D / 2.0
    return np.where(pos, val, D**q / p)


def phi_density(gd, gv, p):
    """Per-element ``(|d| + |v|)^(p-2) |d|^2``; zero wherever ``d = 0``."""
    dn = np.sqrt(np.einsum("...d,...d->...", gd, gd))
    vn = np.sqrt(np.einsum("...d,...d->...", gv, gv))
    with np.errstate(divide="ignore", invalid="ignore"):
        val = (dn + vn) ** (p - 2.0) * dn * dn
    return np.where(dn > 0, val, 0.0)


def _same_mesh(u, v):
    if u.mesh is not v.mesh:
        raise ValueError("functions live on different meshes")
    return u.mesh


def bregman(u: FeFunction, v: FeFunction, data: ProblemData) -> float:
    """D_F(u, v) = F(u) - F(v) - <F'(v), u - v>.  The load terms cancel exactly."""
    mesh = _same_mesh(u, v)
    gv = element_gradients(mesh, v.coeffs)
    gd = element_gradients(mesh, u.coeffs - v.coeffs)
    return float(np.sum(mesh.areas * bregman_density(gv, gd, data.p)))


def phi(u: FeFunction, v: FeFunction, data: ProblemData) -> float:
    mesh = _same_mesh(u, v)
    gv = element_gradients(mesh, v.coeffs)
    gd = element_gradients(mesh, u.coeffs - v.coeffs)
    return float(np.sum(mesh.areas * phi_density(gd, gv, data.p)))


def seminorm(v: FeFunction, s: float) -> float:
    """|v|_{W^{1,s}} = (sum_T |T| |grad v|^s)^(1/s)."""
    if s < 1:
        raise ValueError(f"seminorm exponent must be >= 1, got {s}")
    mesh = v.mesh
    g = element_gradients(mesh, v.coeffs)
    n2 = np.einsum("td,td->t", g, g)
    return float(np.sum(mesh.areas * n2 ** (s / 2.0)) ** (1.0 / s))
