"""Local, coarse and full-space minimization of the p-Laplace energy by FISTA.

A :class:`Space` packs everything the kernels need about one subspace: the fine
triangles its functions touch, the local dof of each triangle vertex (``-1``
when the vertex carries none), basis gradients per vertex and triangle areas.
Coarse basis functions are expressed on the fine triangles through their
coarse parent triangle, so one kernel serves all three kinds of space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import kernels
from .fem import ProblemData, element_gradients, energy
from .mesh import FeFunction, Mesh, MeshPair

__all__ = [
    "Space",
    "FistaConfig",
    "Subproblem",
    "SolveResult",
    "SubsolverError",
    "full_space",
    "coarse_space",
    "local_space",
    "solve_subproblem",
    "reference_solution",
]

STATUS = {0: "converged", 1: "max_iters", 2: "nonfinite", 3: "linesearch"}


class SubsolverError(RuntimeError):
    """A subproblem solve hit a non-finite value or a stalled line search."""

    def __init__(self, message, space=None):
        super().__init__(message)
        self.space = space


@dataclass(frozen=True, eq=False)
class Space:
    kind: str
    index: int
    mesh: Mesh
    elements: np.ndarray
    dof: np.ndarray
    dphi: np.ndarray
    area: np.ndarray
    n: int
    scale: float
    global_dofs: np.ndarray | None = None
    prolongation: sp.spmatrix | None = None

    @property
    def label(self):
        return "coarse" if self.kind == "coarse" else f"{self.kind}[{self.index}]"

    def extend(self, w):
        """Fine coefficient vector of ``R^* w``."""
        if self.prolongation is not None:
            return self.prolongation @ w
        out = np.zeros(self.mesh.n_dofs)
        out[self.global_dofs] = w
        return out

    def restrict_load(self, data: ProblemData):
        b = data.load(self.mesh)
        if self.prolongation is not None:
            return self.prolongation.T @ b
        return b[self.global_dofs]

    def lower_bound(self, psi_minus_base):
        """Box lower bound on local coefficients implied by ``base + R^* w >= psi``.

        Exact for nodal spaces.  For the coarse space it is the inner box
        ``w_c >= max`` of the fine bound over the support of hat ``c``, which
        keeps every fine node feasible because the coarse hats are nonnegative
        and sum to at most one.
        """
        if self.prolongation is None:
            return psi_minus_base[self.global_dofs]
        P = self.prolongation.tocsc()
        out = np.full(self.n, -np.inf)
        for c in range(self.n):
            rows = P.indices[P.indptr[c] : P.indptr[c + 1]]
            if rows.size:
                out[c] = psi_minus_base[rows].max()
        return out

    @cached_property
    def stiffness_max_eig(self):
        """Largest eigenvalue of the p=2 stiffness on this space (power iteration)."""
        if self.n == 0:
            return 0.0
        local = self.area[:, None, None] * np.einsum("ead,ebd->eab", self.dphi, self.dphi)
        keep = (self.dof[:, :, None] >= 0) & (self.dof[:, None, :] >= 0)
        rows = np.broadcast_to(self.dof[:, :, None], local.shape)[keep]
        cols = np.broadcast_to(self.dof[:, None, :], local.shape)[keep]
        K = sp.csr_matrix((local[keep], (rows, cols)), shape=(self.n, self.n))
        x = np.ones(self.n) + 0.5 * np.cos(np.arange(self.n))
        lam = 0.0
        for _ in range(200):
            y = K @ x
            lam_new = float(np.linalg.norm(y) / np.linalg.norm(x))
            x = y / np.linalg.norm(y)
            if abs(lam_new - lam) <= 1e-6 * lam_new:
                lam = lam_new
                break
            lam = lam_new
        return lam


def _space(kind, index, mesh, elements, dof, dphi, scale, **extra):
    dof = np.ascontiguousarray(dof, dtype=np.intc)
    return Space(
        kind=kind,
        index=index,
        mesh=mesh,
        elements=np.ascontiguousarray(elements),
        dof=dof,
        dphi=np.ascontiguousarray(dphi, dtype=float),
        area=np.ascontiguousarray(mesh.areas[elements], dtype=float),
        n=int(dof.max(initial=-1)) + 1 if "n" not in extra else extra.pop("n"),
        scale=float(scale),
        **extra,
    )


def full_space(mesh: Mesh) -> Space:
    elements = np.arange(mesh.n_triangles)
    return _space(
        "full", 0, mesh, elements, mesh.element_dofs, mesh.basis_gradients, mesh.h,
        n=mesh.n_dofs, global_dofs=np.arange(mesh.n_dofs),
    )


def coarse_space(pair: MeshPair) -> Space:
    """Coarse P1 space on fine triangles; stop criteria scale with H."""
    coarse, fine = pair.coarse, pair.fine
    parent = pair.fine_parent
    dof = coarse.element_dofs[parent]
    elements = np.flatnonzero((dof >= 0).any(axis=1))
    return _space(
        "coarse", 0, fine, elements, dof[elements], coarse.basis_gradients[parent[elements]],
        coarse.h, n=coarse.n_dofs, prolongation=pair.prolongation.tocsr(),
    )


def local_space(dec, k: int) -> Space:
    """Space of subdomain ``k`` (1-based), extension by zero into the fine space."""
    fine = dec.pair.fine
    dofs = dec.local_dofs[k - 1]
    to_local = np.full(fine.n_dofs + 1, -1, dtype=np.intc)
    to_local[dofs] = np.arange(dofs.size)
    elements = dec.patch_elements[k - 1]
    ed = fine.element_dofs[elements]
    dof = np.where(ed >= 0, to_local[ed], -1)
    return _space(
        "local", k, fine, elements, dof, fine.basis_gradients[elements], fine.h,
        n=dofs.size, global_dofs=dofs,
    )


@dataclass(frozen=True)
class FistaConfig:
    """FISTA settings.  ``initial_step=None`` uses the inverse of the p=2 stiffness'
    largest eigenvalue on the space being solved."""

    initial_step: float | None = None
    backtrack_factor: float = 0.5
    grow_factor: float = 1.25
    tol: float = 1e-10
    max_iters: int = 50_000
    restart: bool = True

    def __post_init__(self):
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if self.grow_factor < 1.0:
            raise ValueError("grow_factor must be >= 1")
        if self.tol < 0 or self.max_iters < 1:
            raise ValueError("tol must be >= 0 and max_iters >= 1")
        if self.initial_step is not None and self.initial_step <= 0:
            raise ValueError("initial_step must be positive")


@dataclass(eq=False)
class Subproblem:
    """Minimize ``w -> F(base + R^* w)`` over ``space``, optionally with ``w >= lower``."""

    base: FeFunction
    space: Space
    data: ProblemData
    lower: np.ndarray | None = None
    base_grads: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.base.mesh is not self.space.mesh:
            raise ValueError("base iterate and space live on different meshes")
        if self.base_grads is None:
            self.base_grads = element_gradients(self.base.mesh, self.base.coeffs)

    @cached_property
    def kernel_args(self):
        sp_ = self.space
        base = np.ascontiguousarray(self.base_grads[sp_.elements])
        load = np.ascontiguousarray(sp_.restrict_load(self.data), dtype=float)
        return base, sp_.area, sp_.dof, sp_.dphi, load

    def objective(self, w):
        """``F(base + R^* w)`` evaluated through the global energy."""
        return energy(self.base + FeFunction(self.base.mesh, self.space.extend(w)), self.data)

    def local_objective(self, w, grad=None, backend=None):
        """``F(base + R^* w) - F(base)`` via the kernels."""
        k = kernels.get_backend(backend)
        return k.objective(np.ascontiguousarray(w, dtype=float), *self.kernel_args,
                           float(self.data.p), grad)


@dataclass
class SolveResult:
    w: np.ndarray
    iterations: int
    status: str
    step: float
    gradmap_norm: float
    evaluations: int

    @property
    def converged(self):
        return self.status == "converged"


def solve_subproblem(sp_: Subproblem, cfg: FistaConfig, *, w0=None, backend=None,
                     trace=None) -> SolveResult:
    space = sp_.space
    if space.n == 0:
        return SolveResult(np.zeros(0), 0, "converged", 0.0, 0.0, 0)
    step = cfg.initial_step
    if step is None:
        lam = space.stiffness_max_eig
        step = 1.0 / lam if lam > 0 else 1.0
    lower = None if sp_.lower is None else np.ascontiguousarray(sp_.lower, dtype=float)
    if w0 is None:
        w0 = np.zeros(space.n)
        if lower is not None:
            w0 = np.maximum(w0, lower)
    k = kernels.get_backend(backend)
    base, area, dof, dphi, load = sp_.kernel_args
    w, it, status, tau, gm, evals = k.fista(
        np.ascontiguousarray(w0, dtype=float), lower, base, area, dof, dphi, load,
        float(sp_.data.p), float(step), cfg.backtrack_factor, cfg.grow_factor, cfg.tol,
        space.scale, int(cfg.max_iters), bool(cfg.restart), trace,
    )
    res = SolveResult(np.asarray(w), int(it), STATUS[int(status)], float(tau), float(gm),
                      int(evals))
    if res.status in ("nonfinite", "linesearch"):
        raise SubsolverError(
            f"{space.label}: FISTA stopped with status '{res.status}' after "
            f"{res.iterations} iterations", space=space.label,
        )
    return res


def reference_solution(data: ProblemData, mesh: Mesh, obstacle=None, budget=20_000,
                       cfg: FistaConfig | None = None, backend=None):
    """Budget-driven full-space solve; returns ``(u, SolveResult)``.

    The result's ``gradmap_norm`` (norm of the projected-gradient map at the
    last step) certifies the quality of ``u``.
    """
    cfg = cfg or FistaConfig()
    cfg = FistaConfig(cfg.initial_step, cfg.backtrack_factor, cfg.grow_factor, 0.0,
                      int(budget), cfg.restart)
    base = FeFunction.zeros(mesh)
    lower = None
    if obstacle is not None:
        lower = np.asarray(obstacle.psi, dtype=float)
    sp_ = Subproblem(base, full_space(mesh), data, lower=lower)
    res = solve_subproblem(sp_, cfg, backend=backend)
    return FeFunction(mesh, res.w), res
