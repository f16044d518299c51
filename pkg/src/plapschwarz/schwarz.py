"""Two-level additive Schwarz iteration for the p-Laplace energy, with and
without a lower obstacle, plus convergence bookkeeping.

One outer step solves the coarse problem and every subdomain problem on the
same base iterate, then adds the relaxed corrections::

    u_{n+1} = u_n + tau * (R_0^* w_0 + R_1^* w_1 + ... + R_N^* w_N)

The subproblem batch may run on a thread pool (the compiled kernel drops the
GIL); the sum is always accumulated in ascending subdomain order, so serial
and threaded runs produce bitwise identical iterates.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .decomposition import Decomposition, Obstacle
from .fem import ProblemData, element_gradients, energy
from .mesh import FeFunction, Mesh, MeshPair
from .subsolver import (
    FistaConfig,
    Subproblem,
    SubsolverError,
    coarse_space,
    local_space,
    reference_solution,
    solve_subproblem,
)

__all__ = [
    "SOLVER_SLACK",
    "ERROR_FLOOR",
    "SchwarzConfig",
    "SchwarzError",
    "ConvergenceRecord",
    "RateFit",
    "run_asm",
    "estimate_rate",
    "theoretical_rate",
    "sublinear_bound",
    "cached_reference",
    "write_csv",
    "read_csv",
]

SOLVER_SLACK = 1e-10
ERROR_FLOOR = 1e2 * SOLVER_SLACK
CSV_HEADER = ["iter", "energy", "energy_error", "walltime_s"]


class SchwarzError(RuntimeError):
    """Raised when an outer iteration breaks monotonicity, feasibility or a subsolve."""


@dataclass
class SchwarzConfig:
    data: ProblemData
    pair: MeshPair
    dec: Decomposition
    tau: float | None = None
    obstacle: Obstacle | None = None
    outer_iters: int = 100
    fista: FistaConfig = field(default_factory=FistaConfig)
    u0: FeFunction | None = None
    workers: int = 1
    reference_budget: int = 20_000
    cache_dir: str | os.PathLike | None = None
    stop_at_floor: bool = True
    backend: str | None = None

    def __post_init__(self):
        if self.dec.pair is not self.pair:
            raise ValueError("decomposition was built on a different mesh pair")
        if self.tau is None:
            self.tau = self.dec.tau0
        if not 0.0 < self.tau <= self.dec.tau0 + 1e-15:
            raise ValueError(f"tau must lie in (0, {self.dec.tau0:g}], got {self.tau:g}")
        if self.outer_iters < 0:
            raise ValueError("outer_iters must be nonnegative")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        fine = self.pair.fine
        if self.u0 is None:
            if self.obstacle is None:
                self.u0 = FeFunction.zeros(fine)
            else:
                self.u0 = FeFunction(fine, np.maximum(self.obstacle.psi, 0.0))
        if self.u0.mesh is not fine:
            raise ValueError("u0 must live on the fine mesh")
        if self.obstacle is not None and not self.obstacle.is_feasible(self.u0):
            raise ValueError("u0 violates the obstacle")

    def describe(self) -> dict:
        """Flat, timestamp-free provenance dictionary for CSV headers."""
        data, pair = self.data, self.pair
        f = data.f if np.isscalar(data.f) else "nodal:" + _digest(np.asarray(data.f))
        out = {
            "version": __version__,
            "backend": kernels.backend_name(self.backend),
            "p": repr(float(data.p)),
            "f": repr(float(f)) if np.isscalar(f) else f,
            "h_inv": pair.fine.m,
            "H_inv": pair.coarse.m,
            "delta_layers": self.dec.delta_layers,
            "subdomains": self.dec.N,
            "colors": self.dec.n_colors,
            "tau": repr(float(self.tau)),
            "outer_iters": self.outer_iters,
            "obstacle": "none" if self.obstacle is None else "psi:" + _digest(self.obstacle.psi),
            "u0": "zero" if not np.any(self.u0.coeffs) else "given:" + _digest(self.u0.coeffs),
            "reference_budget": self.reference_budget,
            "error_floor": repr(ERROR_FLOOR),
        }
        for k, v in asdict(self.fista).items():
            out[f"fista_{k}"] = "auto" if v is None else v
        return out


def _digest(a):
    return hashlib.sha256(np.ascontiguousarray(a, dtype=float).tobytes()).hexdigest()[:16]


@dataclass
class RateFit:
    rho: float
    r2: float
    slope: float
    intercept: float
    n_used: int


@dataclass
class ConvergenceRecord:
    energies: np.ndarray
    reference_energy: float
    walltimes: np.ndarray
    metadata: dict = field(default_factory=dict)
    final: FeFunction | None = None
    stop_reason: str = "outer_iters"
    subsolver_iterations: list = field(default_factory=list)
    unconverged_solves: int = 0
    fit: RateFit | None = None

    @property
    def errors(self):
        return self.energies - self.reference_energy

    @property
    def fitted_rate(self):
        return None if self.fit is None else self.fit.rho

    @property
    def iterations(self):
        return len(self.energies) - 1


def cached_reference(data: ProblemData, mesh: Mesh, obstacle: Obstacle | None = None,
                     budget=20_000, cache_dir=None, cfg: FistaConfig | None = None,
                     backend=None):
    """Reference minimizer, reused from ``cache_dir`` when a file with the same
    configuration hash exists.  Returns ``(u, info)``."""
    cfg = cfg or FistaConfig()
    key = {
        "m": mesh.m,
        "p": float(data.p),
        "f": float(data.f) if np.isscalar(data.f) else _digest(data.f),
        "obstacle": None if obstacle is None else _digest(obstacle.psi),
        "budget": int(budget),
        "fista": asdict(cfg),
        "backend": kernels.backend_name(backend),
    }
    tag = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:20]
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"reference-{tag}.npz"
        if path.exists():
            with np.load(path) as z:
                info = {k: z[k].item() for k in ("energy", "gradmap_norm", "iterations")}
                return FeFunction(mesh, z["u"].copy()), info
    u, res = reference_solution(data, mesh, obstacle, budget=budget, cfg=cfg, backend=backend)
    info = {
        "energy": energy(u, data),
        "gradmap_norm": res.gradmap_norm,
        "iterations": res.iterations,
    }
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, u=u.coeffs, **info)
        os.replace(tmp, path)
    return u, info


def _spaces(dec: Decomposition):
    cached = getattr(dec, "_spaces", None)
    if cached is None:
        cached = [coarse_space(dec.pair)] + [local_space(dec, k) for k in range(1, dec.N + 1)]
        dec._spaces = cached
    return cached


def run_asm(cfg: SchwarzConfig, reference: tuple | None = None,
            callback=None) -> ConvergenceRecord:
    """Run the outer iteration and record energies against a reference minimizer.

    ``reference`` is an optional ``(u_star, info)`` pair as returned by
    :func:`cached_reference`; otherwise one is computed (or loaded from
    ``cfg.cache_dir``).  ``callback(n, u)`` sees every iterate, ``u0`` included,
    before it is checked.
    """
    data, fine = cfg.data, cfg.pair.fine
    if reference is None:
        reference = cached_reference(data, fine, cfg.obstacle, cfg.reference_budget,
                                     cfg.cache_dir, backend=cfg.backend)
    u_star, ref_info = reference
    f_star = float(ref_info["energy"])
    spaces = _spaces(cfg.dec)
    psi = None if cfg.obstacle is None else cfg.obstacle.psi

    u = cfg.u0
    energies = [energy(u, data)]
    walltimes = [0.0]
    inner = []
    unconverged = 0
    stop = "outer_iters"
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    def solve(sp_):
        try:
            return solve_subproblem(sp_, cfg.fista, backend=cfg.backend)
        except SubsolverError as exc:
            raise SchwarzError(str(exc)) from exc

    if callback is not None:
        callback(0, u)
    try:
        if cfg.stop_at_floor and energies[0] - f_star < ERROR_FLOOR:
            stop = "error_floor"
        for n in range(cfg.outer_iters if stop == "outer_iters" else 0):
            t0 = time.perf_counter()
            grads = element_gradients(fine, u.coeffs)
            gap = None if psi is None else psi - u.coeffs
            problems = [
                Subproblem(u, s, data, None if gap is None else s.lower_bound(gap), grads)
                for s in spaces
            ]
            results = list(pool.map(solve, problems)) if pool else [solve(q) for q in problems]

            correction = np.zeros(fine.n_dofs)
            for s, res in zip(spaces, results):
                if s.prolongation is not None:
                    correction += s.prolongation @ res.w
                else:
                    correction[s.global_dofs] += res.w
            u_next = FeFunction(fine, u.coeffs + cfg.tau * correction)
            e_next = energy(u_next, data)
            if callback is not None:
                callback(n + 1, u_next)
            walltimes.append(time.perf_counter() - t0)
            inner.append([r.iterations for r in results])
            unconverged += sum(not r.converged for r in results)

            if e_next > energies[-1] + SOLVER_SLACK:
                raise SchwarzError(
                    f"energy increased at iteration {n + 1}: {energies[-1]!r} -> {e_next!r}"
                )
            if cfg.obstacle is not None and not cfg.obstacle.is_feasible(u_next):
                raise SchwarzError(
                    f"iterate {n + 1} violates the obstacle by "
                    f"{cfg.obstacle.violation(u_next):.3e}"
                )
            if e_next - f_star < -SOLVER_SLACK:
                raise SchwarzError(
                    f"iterate {n + 1} has energy {e_next - f_star:.3e} below the reference; "
                    "increase the reference budget"
                )
            u = u_next
            energies.append(e_next)
            if cfg.stop_at_floor and e_next - f_star < ERROR_FLOOR:
                stop = "error_floor"
                break
    finally:
        if pool is not None:
            pool.shutdown()

    meta = cfg.describe()
    meta["reference_energy"] = repr(f_star)
    meta["reference_gradmap_norm"] = repr(float(ref_info["gradmap_norm"]))
    meta["reference_iterations"] = int(ref_info["iterations"])
    meta["stop_reason"] = stop
    meta["unconverged_subsolves"] = unconverged
    rec = ConvergenceRecord(
        energies=np.array(energies),
        reference_energy=f_star,
        walltimes=np.array(walltimes),
        metadata=meta,
        final=u,
        stop_reason=stop,
        subsolver_iterations=inner,
        unconverged_solves=unconverged,
    )
    try:
        rec.fit = estimate_rate(rec)
    except ValueError:
        rec.fit = None
    return rec


def estimate_rate(rec, tail_fraction=0.5, floor=ERROR_FLOOR) -> RateFit:
    """Fit ``log10(error) ~ a + b n`` on the last ``tail_fraction`` of the
    iterations whose error exceeds ``floor``; ``rho = 10**b``.

    ``rec`` is a :class:`ConvergenceRecord` or a sequence of errors indexed by
    iteration.
    """
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError("tail_fraction must lie in (0, 1]")
    errors = np.asarray(rec.errors if isinstance(rec, ConvergenceRecord) else rec, dtype=float)
    n = np.arange(errors.size)
    usable = np.isfinite(errors) & (errors > floor)
    n, e = n[usable], errors[usable]
    if n.size < 3:
        raise ValueError(f"need at least 3 iterations with error above {floor:g}, got {n.size}")
    keep = max(3, int(math.ceil(tail_fraction * n.size)))
    n, y = n[-keep:].astype(float), np.log10(e[-keep:])
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 1e-24 * max(1.0, float(np.sum(y**2))):
        # flat tail: no decay, and a constant fits it perfectly
        return RateFit(1.0, 1.0, 0.0, float(y.mean()), int(n.size))
    slope, intercept = np.polyfit(n, y, 1)
    ss_res = float(np.sum((y - (intercept + slope * n)) ** 2))
    return RateFit(float(10.0**slope), 1.0 - ss_res / ss_tot, float(slope), float(intercept),
                   int(n.size))


def theoretical_rate(p, tau, mu_phi, C0, constrained=False):
    """Guaranteed per-iteration contraction of the energy error.

    ``1 - (1 - 1/pl) * min(c, (tau**(ph-1) * mu_phi / (2**pd * C0))**(1/(pl-1)))``
    with ``pl = min(p, 2)``, ``ph = max(p, 2)``, ``pd = |p - 2|`` and
    ``c = tau`` for the obstacle problem, ``c = 1`` otherwise.
    """
    if not p > 1.0:
        raise ValueError("p must exceed 1")
    if mu_phi <= 0 or C0 <= 0:
        raise ValueError("mu_phi and C0 must be positive")
    if tau <= 0:
        raise ValueError("tau must be positive")
    pl, ph, pd = min(p, 2.0), max(p, 2.0), abs(p - 2.0)
    inner = (tau ** (ph - 1.0) * mu_phi / (2.0**pd * C0)) ** (1.0 / (pl - 1.0))
    cap = tau if constrained else 1.0
    return 1.0 - (1.0 - 1.0 / pl) * min(cap, inner)


def sublinear_bound(n, p, H, delta):
    """Unscaled algebraic decay shape ``(H/delta)**pl / (n+1)**(ph*(pl-1)/(ph-pl))``."""
    if p == 2:
        raise ValueError("the algebraic decay exponent degenerates at p = 2 (0 in the denominator)")
    if not p > 1.0:
        raise ValueError("p must exceed 1")
    pl, ph = min(p, 2.0), max(p, 2.0)
    expo = ph * (pl - 1.0) / (ph - pl)
    return (H / delta) ** pl / (np.asarray(n, dtype=float) + 1.0) ** expo


def write_csv(rec: ConvergenceRecord, path, omit_timing=False, extra_meta=None):
    """CSV with ``#``-prefixed provenance lines; ``omit_timing`` writes ``nan``
    wall times so reruns compare byte for byte."""
    meta = dict(rec.metadata)
    if extra_meta:
        meta.update(extra_meta)
    with open(path, "w", newline="") as fh:
        for k in sorted(meta):
            fh.write(f"# {k}={meta[k]}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i, (e, err, t) in enumerate(zip(rec.energies, rec.errors, rec.walltimes)):
            w.writerow([i, repr(float(e)), repr(float(err)), "nan" if omit_timing else repr(float(t))])


def read_csv(path):
    """Inverse of :func:`write_csv`: returns ``(metadata, columns)`` with numpy columns."""
    meta, rows = {}, []
    with open(path, newline="") as fh:
        body = []
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k.strip()] = v
            else:
                body.append(line)
    reader = csv.reader(body)
    header = next(reader, None)
    if header != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header {header!r}")
    for r in reader:
        if r:
            rows.append(r)
    cols = {
        "iter": np.array([int(r[0]) for r in rows], dtype=int),
        "energy": np.array([float(r[1]) for r in rows]),
        "energy_error": np.array([float(r[2]) for r in rows]),
        "walltime_s": np.array([float(r[3]) for r in rows]),
    }
    return meta, cols
