"""Uniform right-triangle meshes of the unit square and P1 transfer between them.

Every grid square ``[i/m, (i+1)/m] x [j/m, (j+1)/m]`` is cut along the diagonal
from its lower-left to its upper-right corner::

    d ---- c
    |    / |
    |  /   |
    a ---- b        lower triangle (a, b, c), upper triangle (a, c, d)

Nodes are numbered row-major, ``node = j*(m+1) + i``.  Boundary nodes carry no
degree of freedom; interior node ``(i, j)`` owns dof ``(j-1)*(m-1) + (i-1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Mesh",
    "MeshPair",
    "FeFunction",
    "build_uniform_mesh",
    "build_mesh_pair",
    "coarse_to_fine",
    "nodal_interpolate",
    "evaluate",
    "dump_mesh",
    "load_mesh",
]


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class Mesh:
    """Structured triangulation of [0,1]^2 with ``m`` subdivisions per side.

    Arrays exposed by the mesh are read-only; derived element data are
    computed lazily and cached.
    """

    def __init__(self, m: int):
        if int(m) != m or m < 1:
            raise ValueError(f"mesh resolution must be a positive integer, got {m!r}")
        m = int(m)
        self.m = m
        self.h = 1.0 / m

        ii, jj = np.meshgrid(np.arange(m + 1), np.arange(m + 1))
        ii = ii.ravel()
        jj = jj.ravel()
        self.nodes = _frozen(np.column_stack([ii / m, jj / m]))
        self.grid = _frozen(np.column_stack([ii, jj]))

        ci, cj = np.meshgrid(np.arange(m), np.arange(m))
        a = (cj * (m + 1) + ci).ravel()
        b = a + 1
        c = a + m + 2
        d = a + m + 1
        tri = np.empty((2 * m * m, 3), dtype=np.int64)
        tri[0::2] = np.column_stack([a, b, c])
        tri[1::2] = np.column_stack([a, c, d])
        self.triangles = _frozen(tri)

        boundary = (ii == 0) | (ii == m) | (jj == 0) | (jj == m)
        index = np.full((m + 1) ** 2, -1, dtype=np.int64)
        index[~boundary] = np.arange(int((~boundary).sum()))
        self.boundary = _frozen(boundary)
        self.interior_index = _frozen(index)
        self.interior_nodes = _frozen(np.flatnonzero(~boundary))

    def __repr__(self):
        return f"Mesh(m={self.m})"

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_dofs(self) -> int:
        return self.interior_nodes.shape[0]

    @cached_property
    def areas(self):
        """Signed triangle areas (all equal to h^2/2)."""
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return _frozen(0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]))

    @cached_property
    def basis_gradients(self):
        """Array ``(T, 3, 2)``: gradient of each vertex hat restricted to each triangle."""
        p = self.nodes[self.triangles]
        x, y = p[..., 0], p[..., 1]
        two_area = 2.0 * self.areas
        g = np.empty((self.n_triangles, 3, 2))
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            g[:, a, 0] = (y[:, b] - y[:, c]) / two_area
            g[:, a, 1] = (x[:, c] - x[:, b]) / two_area
        return _frozen(g)

    @cached_property
    def element_dofs(self):
        """Array ``(T, 3)`` of interior dof indices per triangle vertex, ``-1`` on the boundary."""
        return _frozen(self.interior_index[self.triangles])

    def full(self, coeffs):
        """Scatter interior coefficients into a nodal vector that is zero on the boundary."""
        coeffs = np.asarray(coeffs)
        out = np.zeros(coeffs.shape[:-1] + (self.n_nodes,))
        out[..., self.interior_nodes] = coeffs
        return out

    def cell_of(self, points):
        """Locate ``points`` (K, 2): returns triangle index and barycentric weights (K, 3)."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        s = pts * self.m
        ci = np.clip(np.floor(s[:, 0]).astype(np.int64), 0, self.m - 1)
        cj = np.clip(np.floor(s[:, 1]).astype(np.int64), 0, self.m - 1)
        xi = s[:, 0] - ci
        eta = s[:, 1] - cj
        lower = xi >= eta
        tri = 2 * (cj * self.m + ci) + (~lower)
        bary = np.where(
            lower[:, None],
            np.column_stack([1.0 - xi, xi - eta, eta]),
            np.column_stack([1.0 - eta, xi, eta - xi]),
        )
        return tri, bary


@dataclass(frozen=True, eq=False)
class FeFunction:
    """Continuous P1 function vanishing on the boundary, stored by interior coefficients."""

    mesh: Mesh
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.mesh.n_dofs,):
            raise ValueError(
                f"expected {self.mesh.n_dofs} interior coefficients, got shape {c.shape}"
            )
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, mesh):
        return cls(mesh, np.zeros(mesh.n_dofs))

    def nodal(self):
        return self.mesh.full(self.coeffs)

    def _check(self, other):
        if not isinstance(other, FeFunction) or other.mesh is not self.mesh:
            raise ValueError("FeFunction operands live on different meshes")

    def __add__(self, other):
        self._check(other)
        return FeFunction(self.mesh, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return FeFunction(self.mesh, self.coeffs - other.coeffs)

    def __mul__(self, t):
        return FeFunction(self.mesh, float(t) * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self):
        return FeFunction(self.mesh, -self.coeffs)


def build_uniform_mesh(m: int) -> Mesh:
    return Mesh(m)


@dataclass(frozen=True, eq=False)
class MeshPair:
    """Nested coarse/fine pair; the fine mesh refines each coarse square ``ratio`` times."""

    coarse: Mesh
    fine: Mesh
    refinement_ratio: int = field(init=False)

    def __post_init__(self):
        M, m = self.coarse.m, self.fine.m
        if m % M:
            raise ValueError(f"fine resolution {m} is not a multiple of coarse resolution {M}")
        object.__setattr__(self, "refinement_ratio", m // M)

    @property
    def H(self) -> float:
        return self.coarse.h

    @property
    def h(self) -> float:
        return self.fine.h

    def coarse_node_to_fine(self, c):
        """Fine node index that coincides with coarse node ``c``."""
        r = self.refinement_ratio
        i, j = self.coarse.grid[c]
        return j * r * (self.fine.m + 1) + i * r

    @cached_property
    def prolongation(self):
        """Sparse ``(fine dofs, coarse dofs)`` matrix of the P1 inclusion V_0 -> V."""
        fine, coarse = self.fine, self.coarse
        tri, bary = coarse.cell_of(fine.nodes[fine.interior_nodes])
        rows = np.repeat(np.arange(fine.n_dofs), 3)
        cols = coarse.element_dofs[tri].ravel()
        vals = bary.ravel()
        keep = (cols >= 0) & (vals != 0.0)
        P = sp.csr_matrix(
            (vals[keep], (rows[keep], cols[keep])), shape=(fine.n_dofs, coarse.n_dofs)
        )
        P.sum_duplicates()
        return P

    @cached_property
    def fine_parent(self):
        """Coarse triangle containing each fine triangle."""
        centroids = self.fine.nodes[self.fine.triangles].mean(axis=1)
        tri, _ = self.coarse.cell_of(centroids)
        return _frozen(tri)


def build_mesh_pair(M: int, m: int) -> MeshPair:
    return MeshPair(Mesh(M), Mesh(m))


def coarse_to_fine(pair: MeshPair, v0: FeFunction) -> FeFunction:
    """Fine-mesh coefficients of the coarse P1 function ``v0`` (exact nesting)."""
    if v0.mesh is not pair.coarse:
        raise ValueError("v0 does not live on the coarse mesh of this pair")
    return FeFunction(pair.fine, pair.prolongation @ v0.coeffs)


def nodal_interpolate(mesh: Mesh, point_values) -> FeFunction:
    """I_h: sample ``point_values(x, y)`` at interior nodes; boundary values are dropped."""
    xy = mesh.nodes[mesh.interior_nodes]
    vals = np.asarray(point_values(xy[:, 0], xy[:, 1]), dtype=float)
    return FeFunction(mesh, np.broadcast_to(vals, (mesh.n_dofs,)).copy())


def evaluate(v: FeFunction, points) -> np.ndarray:
    """Point values of ``v`` at ``points`` of shape (K, 2)."""
    tri, bary = v.mesh.cell_of(points)
    nodal = v.nodal()
    return np.einsum("kv,kv->k", nodal[v.mesh.triangles[tri]], bary)


def dump_mesh(mesh: Mesh, path) -> None:
    lines = [f"m={mesh.m}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path):
    """Read a dump back; returns ``(m, nodes, triangles)`` without rebuilding a Mesh."""
    lines = Path(path).read_text().split("\n")
    if not lines[0].startswith("m="):
        raise ValueError("mesh dump must start with an 'm=<int>' header")
    m = int(lines[0][2:])
    n_nodes = (m + 1) ** 2
    nodes = np.array([[float(t) for t in ln.split()] for ln in lines[1 : 1 + n_nodes]])
    tris = np.array(
        [[int(t) for t in ln.split()] for ln in lines[1 + n_nodes :] if ln.strip()],
        dtype=np.int64,
    )
    return m, nodes, tris
