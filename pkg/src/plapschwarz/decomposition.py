"""Two-level overlapping domain decomposition of the unit square.

Subdomain ``k`` (numbered from 1; index 0 is the coarse space) owns the
``H x H`` block of two coarse triangles at coarse cell ``(I, J)`` with
``k - 1 = J*M + I``.  Its overlapping extension adds ``delta_layers`` rings
of fine squares on each side, clipped to the unit square.  Local degrees of
freedom are the fine interior nodes strictly inside the extension, so local
functions vanish on its boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse.linalg as spla

from .fem import ProblemData, bregman_density, element_gradients, mass_matrix, phi_density
from .mesh import FeFunction, MeshPair

__all__ = [
    "Decomposition",
    "Obstacle",
    "build_decomposition",
    "restrict",
    "extend_by_zero",
    "l2_project_coarse",
    "stable_split",
    "monotone_coarse_interp",
    "constrained_split",
    "parts_to_fine",
    "split_bregman_sum",
    "measure_C0",
    "smooth_random_function",
    "edge_wave",
    "split_quotient",
    "measure_split_quotient",
]


@dataclass(frozen=True, eq=False)
class Obstacle:
    """Lower obstacle at fine interior nodes; ``-inf`` marks an unconstrained node."""

    psi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "psi", np.asarray(self.psi, dtype=float))

    def is_feasible(self, v: FeFunction, atol=0.0) -> bool:
        return bool(np.all(v.coeffs >= self.psi - atol))

    def violation(self, v: FeFunction) -> float:
        """Largest amount by which ``v`` dips below the obstacle (0 if feasible)."""
        gap = self.psi - v.coeffs
        return float(max(0.0, np.max(gap, initial=0.0)))

    @classmethod
    def disk(cls, mesh, height=0.02, radius=0.25, center=(0.5, 0.5)):
        """``psi = height`` on the closed disk, unconstrained elsewhere."""
        xy = mesh.nodes[mesh.interior_nodes]
        r2 = (xy[:, 0] - center[0]) ** 2 + (xy[:, 1] - center[1]) ** 2
        return cls(np.where(r2 <= radius * radius, height, -np.inf))


class Decomposition:
    """Overlapping subdomains, partition of unity and coloring on a mesh pair."""

    def __init__(self, pair: MeshPair, delta_layers: int):
        r = pair.refinement_ratio
        if int(delta_layers) != delta_layers or delta_layers < 1:
            raise ValueError(f"delta_layers must be a positive integer, got {delta_layers!r}")
        delta_layers = int(delta_layers)
        if 2 * delta_layers > r:
            raise ValueError(
                f"overlap of {delta_layers} layers exceeds H/2 = {r / 2} fine layers; "
                "the 4-coloring bound needs delta <= H/2"
            )
        self.pair = pair
        self.delta_layers = delta_layers
        fine = pair.fine
        m, M, L = fine.m, pair.coarse.m, delta_layers

        I, J = np.meshgrid(np.arange(M), np.arange(M))
        I, J = I.ravel(), J.ravel()
        self.blocks = np.column_stack([I * r, (I + 1) * r, J * r, (J + 1) * r])
        self.extents = np.column_stack(
            [
                np.maximum(I * r - L, 0),
                np.minimum((I + 1) * r + L, m),
                np.maximum(J * r - L, 0),
                np.minimum((J + 1) * r + L, m),
            ]
        )
        self.N = M * M

        gi = fine.grid[:, 0]
        gj = fine.grid[:, 1]
        local = []
        raw = np.zeros((self.N, fine.n_nodes))
        for k, (x0, x1, y0, y1) in enumerate(self.extents):
            inside = (gi > x0) & (gi < x1) & (gj > y0) & (gj < y1)
            local.append(fine.interior_index[inside & ~fine.boundary])
            dist = np.full(fine.n_nodes, np.inf)
            if x0 > 0:
                dist = np.minimum(dist, gi - x0)
            if x1 < m:
                dist = np.minimum(dist, x1 - gi)
            if y0 > 0:
                dist = np.minimum(dist, gj - y0)
            if y1 < m:
                dist = np.minimum(dist, y1 - gj)
            closed = (gi >= x0) & (gi <= x1) & (gj >= y0) & (gj <= y1)
            raw[k] = np.where(closed, np.minimum(1.0, dist / L), 0.0)
        self.local_dofs = [np.ascontiguousarray(d) for d in local]

        total = raw.sum(axis=0)
        interior = fine.interior_nodes
        pou = raw[:, interior] / total[interior]
        self.pou = pou
        self.pou.setflags(write=False)

        self._color()

    def _color(self):
        fine = self.pair.fine
        touched = []
        for dofs in self.local_dofs:
            mark = np.zeros(fine.n_dofs + 1, dtype=bool)
            mark[dofs] = True
            ed = fine.element_dofs
            touched.append(np.flatnonzero(mark[ed].any(axis=1)))
        conflict = [[False] * self.N for _ in range(self.N)]
        for a in range(self.N):
            for b in range(a + 1, self.N):
                hit = np.intersect1d(touched[a], touched[b], assume_unique=True).size > 0
                conflict[a][b] = conflict[b][a] = hit
        colors = np.full(self.N, -1, dtype=int)
        for k in range(self.N):
            used = {colors[j] for j in range(k) if conflict[k][j]}
            c = 0
            while c in used:
                c += 1
            colors[k] = c
        self.patch_elements = touched
        self.colors = colors
        self.n_colors = int(colors.max()) + 1
        self.tau0 = 1.0 / (self.n_colors + 1)

    def __repr__(self):
        return (
            f"Decomposition(H=1/{self.pair.coarse.m}, h=1/{self.pair.fine.m}, "
            f"delta={self.delta_layers}h, N={self.N}, colors={self.n_colors})"
        )

    @property
    def H_over_delta(self):
        return self.pair.refinement_ratio / self.delta_layers

    def node_set(self, k):
        return set(self.local_dofs[k].tolist())


def build_decomposition(pair: MeshPair, delta_layers: int) -> Decomposition:
    return Decomposition(pair, delta_layers)


def _check_k(dec, k):
    if not 1 <= k <= dec.N:
        raise IndexError(f"subdomain index {k} out of range [1, {dec.N}]")
    return dec.local_dofs[k - 1]


def restrict(dec: Decomposition, k: int, g):
    """Entries of the global nodal vector ``g`` at the local dofs of subdomain ``k``."""
    return np.asarray(g, dtype=float)[_check_k(dec, k)]


def extend_by_zero(dec: Decomposition, k: int, w_local) -> FeFunction:
    dofs = _check_k(dec, k)
    w_local = np.asarray(w_local, dtype=float)
    if w_local.shape != dofs.shape:
        raise ValueError(f"subdomain {k} has {dofs.size} dofs, got {w_local.shape}")
    out = np.zeros(dec.pair.fine.n_dofs)
    out[dofs] = w_local
    return FeFunction(dec.pair.fine, out)


@lru_cache(maxsize=16)
def _fine_mass(mesh):
    return mass_matrix(mesh)


@lru_cache(maxsize=16)
def _coarse_mass_solver(pair: MeshPair):
    MH = (pair.prolongation.T @ _fine_mass(pair.fine) @ pair.prolongation).tocsc()
    return MH, spla.splu(MH) if MH.shape[0] else None


def l2_project_coarse(pair: MeshPair, w: FeFunction) -> FeFunction:
    """L2(Omega)-orthogonal projection of a fine P1 function onto the coarse space."""
    if w.mesh is not pair.fine:
        raise ValueError("w does not live on the fine mesh of this pair")
    P = pair.prolongation
    if P.shape[1] == 0:
        return FeFunction(pair.coarse, np.zeros(0))
    b = P.T @ (_fine_mass(pair.fine) @ w.coeffs)
    MH, lu = _coarse_mass_solver(pair)
    x = lu.solve(b)
    res = np.linalg.norm(MH @ x - b)
    scale = np.linalg.norm(b)
    assert res <= 1e-12 * scale or res <= 1e-300, f"coarse mass solve residual {res:.3e}"
    return FeFunction(pair.coarse, x)


def stable_split(dec: Decomposition, w: FeFunction):
    """Parts ``[w_0, w_1, ..., w_N]`` with ``w = R_0^* w_0 + sum_k R_k^* w_k``.

    ``w_0`` is the L2 projection of ``w``; the local parts are the nodal products of
    the partition of unity with the remainder.
    """
    pair = dec.pair
    w0 = l2_project_coarse(pair, w).coeffs
    rem = w.coeffs - pair.prolongation @ w0
    parts = [w0]
    for k in range(dec.N):
        dofs = dec.local_dofs[k]
        parts.append(dec.pou[k, dofs] * rem[dofs])
    return parts


@lru_cache(maxsize=16)
def _support_table(pair: MeshPair):
    """For each coarse dof, the fine dofs where its hat is positive."""
    P = pair.prolongation.tocsc()
    return [P.indices[P.indptr[c] : P.indptr[c + 1]] for c in range(P.shape[1])]


def monotone_coarse_interp(pair: MeshPair, w: FeFunction, sign="plus") -> FeFunction:
    """Coarse function whose value at each coarse node is the minimum of ``w`` over the
    fine nodes where that node's hat is positive.

    Its fine interpolant lies between 0 and ``w`` for nonnegative ``w``.
    """
    if sign != "plus":
        raise ValueError("only the 'plus' variant is defined; split w into max(0, +-w) first")
    if w.mesh is not pair.fine:
        raise ValueError("w does not live on the fine mesh of this pair")
    if np.any(w.coeffs < 0):
        raise ValueError("monotone coarse interpolation needs a nonnegative input")
    table = _support_table(pair)
    vals = np.array([w.coeffs[idx].min() for idx in table]) if table else np.zeros(0)
    return FeFunction(pair.coarse, vals)


def constrained_split(dec: Decomposition, u: FeFunction, v: FeFunction, obstacle: Obstacle):
    """Feasibility-preserving split of ``u - v`` for the obstacle problem.

    ``w_0 = I(max(0, w)) - I(max(0, -w))`` with the monotone coarse interpolation
    ``I``; local parts as in :func:`stable_split`.
    """
    if not (obstacle.is_feasible(u) and obstacle.is_feasible(v)):
        raise ValueError("constrained_split needs feasible u and v")
    pair = dec.pair
    fine = pair.fine
    w = u.coeffs - v.coeffs
    plus = monotone_coarse_interp(pair, FeFunction(fine, np.maximum(w, 0.0))).coeffs
    minus = monotone_coarse_interp(pair, FeFunction(fine, np.maximum(-w, 0.0))).coeffs
    w0 = plus - minus
    rem = w - pair.prolongation @ w0
    parts = [w0]
    for k in range(dec.N):
        dofs = dec.local_dofs[k]
        parts.append(dec.pou[k, dofs] * rem[dofs])
    return parts


def parts_to_fine(dec: Decomposition, parts):
    """Fine coefficient vectors ``R_k^* w_k`` for a list of parts (coarse first)."""
    out = [dec.pair.prolongation @ parts[0]]
    n = dec.pair.fine.n_dofs
    for k, wk in enumerate(parts[1:]):
        z = np.zeros(n)
        z[dec.local_dofs[k]] = wk
        out.append(z)
    return out


def split_bregman_sum(dec: Decomposition, v: FeFunction, parts, data: ProblemData):
    """``sum_k D_F(v + R_k^* w_k, v)`` over all parts, coarse included."""
    fine = dec.pair.fine
    gv = element_gradients(fine, v.coeffs)
    total = 0.0
    for z in parts_to_fine(dec, parts):
        gd = element_gradients(fine, z)
        total += float(np.sum(fine.areas * bregman_density(gv, gd, data.p)))
    return total


def smooth_random_function(mesh, rng, max_freq, amplitude=1.0):
    """Random sine series ``sum a_kl sin(k pi x) sin(l pi y)`` with ``k, l <= max_freq``,
    normalized so its largest nodal value is ``amplitude``."""
    xy = mesh.nodes[mesh.interior_nodes]
    kk = np.arange(1, max_freq + 1)
    a = rng.standard_normal((max_freq, max_freq))
    sx = np.sin(np.pi * np.outer(xy[:, 0], kk))
    sy = np.sin(np.pi * np.outer(xy[:, 1], kk))
    vals = np.einsum("nk,kl,nl->n", sx, a, sy)
    peak = np.max(np.abs(vals))
    return FeFunction(mesh, amplitude * vals / peak if peak > 0 else vals)


def edge_wave(pair: MeshPair, axes="xy") -> FeFunction:
    """Triangle wave of period ``H`` peaking on the coarse grid lines, damped to zero on
    the boundary by ``sin(pi x) sin(pi y)``.

    Its coarse L2 projection nearly vanishes, so the split remainder stays of order
    one inside every overlap strip while the gradient is only of order ``1/H``.
    This is the regime where the split energy grows like a power of ``H/delta``.
    """
    fine = pair.fine
    H = pair.H
    xy = fine.nodes[fine.interior_nodes]

    def tri(t):
        r = np.mod(t, H) / H
        return 1.0 - 4.0 * np.minimum(r, 1.0 - r)

    vals = np.sin(np.pi * xy[:, 0]) * np.sin(np.pi * xy[:, 1])
    if "x" in axes:
        vals = vals * tri(xy[:, 0])
    if "y" in axes:
        vals = vals * tri(xy[:, 1])
    return FeFunction(fine, vals)


def _split_samples(dec: Decomposition, count: int, rng):
    """Sample pairs ``(u, v)`` for the stable-split audits.

    The cycle is: i.i.d. normal nodal coefficients scaled by ``h``; a smooth sine
    series resolving the subdomain scale; a randomly scaled edge wave.  The last
    two sit on a small or zero base ``v``, where the overlap ramps dominate.
    """
    fine = dec.pair.fine
    h = fine.h
    max_freq = max(2, 2 * dec.pair.coarse.m)
    for i in range(count):
        kind = i % 3
        if kind == 0:
            u = FeFunction(fine, h * rng.standard_normal(fine.n_dofs))
            v = FeFunction(fine, h * rng.standard_normal(fine.n_dofs))
            yield u, v
            continue
        if kind == 1:
            w = smooth_random_function(fine, rng, max_freq, amplitude=1.0)
        else:
            w = edge_wave(dec.pair, ("x", "y", "xy")[(i // 3) % 3]) * float(rng.uniform(0.5, 2.0))
        base_scale = rng.choice([0.0, 1e-3, 1e-1])
        v = FeFunction(fine, base_scale * h * rng.standard_normal(fine.n_dofs))
        yield v + w, v


def split_quotient(dec: Decomposition, w: FeFunction, s: float) -> float:
    """``sum_k |R_k^* w_k|_{1,s}^s / |w|_{1,s}^s`` for the stable split of ``w``."""
    fine = dec.pair.fine
    den = float(np.sum(fine.areas * _grad_norm_pow(fine, w.coeffs, s)))
    if den == 0.0:
        return 0.0
    num = sum(float(np.sum(fine.areas * _grad_norm_pow(fine, z, s)))
              for z in parts_to_fine(dec, stable_split(dec, w)))
    return num / den


def _grad_norm_pow(mesh, coeffs, s):
    g = element_gradients(mesh, coeffs)
    return np.einsum("td,td->t", g, g) ** (s / 2.0)


def measure_split_quotient(dec: Decomposition, s: float, samples: int, seed: int = 0):
    """Sample maximum of :func:`split_quotient` over the stable-split sample families."""
    rng = np.random.default_rng(seed)
    return max(split_quotient(dec, u - v, s) for u, v in _split_samples(dec, samples, rng))


def measure_C0(dec: Decomposition, data: ProblemData, samples: int, seed: int = 0):
    """Sample maximum of ``sum_k D_F(v + R_k^* w_k, v) / Phi(u, v)`` using the stable split
    of ``w = u - v``; an empirical lower bound on the stable-decomposition constant."""
    rng = np.random.default_rng(seed)
    fine = dec.pair.fine
    best = 0.0
    for u, v in _split_samples(dec, samples, rng):
        gv = element_gradients(fine, v.coeffs)
        gd = element_gradients(fine, u.coeffs - v.coeffs)
        ph = float(np.sum(fine.areas * phi_density(gd, gv, data.p)))
        if ph == 0.0:
            continue
        parts = stable_split(dec, u - v)
        best = max(best, split_bregman_sum(dec, v, parts, data) / ph)
    return best
