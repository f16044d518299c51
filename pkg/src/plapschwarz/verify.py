"""Sampling checks of the inequalities behind the convergence theory.

Every check draws random pairs of finite element functions (or gradient
vectors), evaluates both sides of an inequality, and counts violations at a
relative tolerance.  Sample extrema are reported as *estimates*: a sample
minimum can only over-estimate an infimum and a sample maximum can only
under-estimate a supremum.

Sampling is sequential from one generator, so the first 100 pairs of a
1000-pair run are exactly the pairs of a 100-pair run.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .fem import bregman_density, element_gradients, flux, phi_density
from .mesh import Mesh, build_mesh_pair

__all__ = [
    "REL_TOL",
    "SampleSpec",
    "ConstantReport",
    "sample_pairs",
    "check_scaling",
    "check_symmetry",
    "check_bregman_equiv",
    "check_bl_inequalities",
    "check_df_as_distance",
    "c0_report",
    "run_suite",
    "write_reports",
]

REL_TOL = 1e-10
T_GRID = (0.0, 1e-3, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0)


@dataclass(frozen=True)
class SampleSpec:
    mesh: Mesh
    p: float
    count: int = 1000
    seed: int = 0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if not self.p > 1.0:
            raise ValueError("p must exceed 1")


@dataclass
class ConstantReport:
    """Outcome of one check.  ``estimates`` maps CSV row names to values."""

    check: str
    name: str
    sample_min: float
    sample_max: float
    violations: int
    samples: int
    seed: int
    estimates: dict = field(default_factory=dict)
    note: str = ""

    @property
    def passed(self):
        return self.violations == 0

    def rows(self):
        items = self.estimates or {f"{self.name}_min": self.sample_min,
                                   f"{self.name}_max": self.sample_max}
        return [[self.check, k, repr(float(v)), self.samples, self.violations, self.seed]
                for k, v in items.items()]

    def summary(self):
        vals = ", ".join(f"{k}={v:.6g}" for k, v in self.estimates.items())
        status = "ok" if self.passed else f"{self.violations} VIOLATIONS"
        return f"{self.check:<18} {status:<14} samples={self.samples} {vals} {self.note}".rstrip()


def _exceeds(lhs, rhs, tol=REL_TOL):
    """Elementwise ``lhs > rhs`` beyond a relative tolerance."""
    return lhs > rhs + tol * np.maximum(np.abs(lhs), np.abs(rhs))


def sample_pairs(spec: SampleSpec):
    """Pairs ``(u, v)`` of interior coefficient vectors.

    Nodal coefficients are i.i.d. normal scaled by ``amplitude * h``.  Every
    tenth pair is adversarial, cycling through coarse-grid images, a single
    hat perturbation, nearly equal functions and a zero base.
    """
    mesh = spec.mesh
    rng = np.random.default_rng(spec.seed)
    n = mesh.n_dofs
    scale = spec.amplitude * mesh.h
    pair = build_mesh_pair(mesh.m // 2, mesh.m) if mesh.m % 2 == 0 and mesh.m >= 4 else None
    out = []
    for i in range(spec.count):
        u = scale * rng.standard_normal(n)
        v = scale * rng.standard_normal(n)
        if i % 10 == 9:
            kind = (i // 10) % 4
            if kind == 0 and pair is not None:
                P = pair.prolongation
                u = 2.0 * scale * (P @ rng.standard_normal(P.shape[1]))
                v = 2.0 * scale * (P @ rng.standard_normal(P.shape[1]))
            elif kind == 1:
                u = v.copy()
                u[rng.integers(n)] += scale * rng.choice([-1.0, 1.0])
            elif kind == 2:
                u = v + 1e-3 * u
            else:
                v = np.zeros(n)
        out.append((u, v))
    return out


def _grads(mesh, coeffs):
    return element_gradients(mesh, np.asarray(coeffs))


def _integral(mesh, density):
    return density @ mesh.areas


def check_scaling(spec: SampleSpec, phi_scale=1.0) -> ConstantReport:
    """``t^max(p,2) Phi(v+w, v) <= Phi(v+tw, v) <= t^min(p,2) Phi(v+w, v)`` for t in [0, 1]."""
    mesh, p = spec.mesh, spec.p
    pl, ph = min(p, 2.0), max(p, 2.0)
    trng = np.random.default_rng([spec.seed, 1])
    viol = used = 0
    lo, hi = np.inf, -np.inf
    for u, v in sample_pairs(spec):
        gv, gw = _grads(mesh, v), _grads(mesh, u - v)
        full = phi_scale * _integral(mesh, phi_density(gw, gv, p))
        if full == 0.0:
            continue
        used += 1
        for t in (*T_GRID, float(trng.uniform())):
            val = _integral(mesh, phi_density(t * gw, gv, p))
            low, up = t**ph * full, t**pl * full
            viol += int(_exceeds(low, val) or _exceeds(val, up))
            if 0.0 < t < 1.0:
                lo = min(lo, val / low)
                hi = max(hi, val / up)
    return ConstantReport(
        "scaling", "phi_scaling", lo, hi, viol, used, spec.seed,
        {"phi_t_over_tpmax_min": lo, "phi_t_over_tpmin_max": hi},
        note="(over 0 < t < 1; the first ratio is >= 1, the second <= 1)",
    )


def check_symmetry(spec: SampleSpec, phi_scale=1.0) -> ConstantReport:
    """``Phi(u, v) <= 2^|p-2| Phi(v, u)``."""
    mesh, p = spec.mesh, spec.p
    bound = 2.0 ** abs(p - 2.0)
    viol = used = 0
    lo, hi = np.inf, -np.inf
    for u, v in sample_pairs(spec):
        gu, gv = _grads(mesh, u), _grads(mesh, v)
        a = _integral(mesh, phi_density(gu - gv, gv, p))
        b = phi_scale * _integral(mesh, phi_density(gv - gu, gu, p))
        if a == 0.0 and b == 0.0:
            continue
        used += 1
        viol += int(_exceeds(a, bound * b))
        r = a / b
        lo, hi = min(lo, r), max(hi, r)
    return ConstantReport(
        "symmetry", "phi_swap_ratio", lo, hi, viol, used, spec.seed,
        {"phi_swap_ratio_max": hi, "phi_swap_bound": bound},
    )


def _bregman_phi(mesh, p, u, v):
    gv, gd = _grads(mesh, v), _grads(mesh, u - v)
    return (_integral(mesh, bregman_density(gv, gd, p)),
            _integral(mesh, phi_density(gd, gv, p)))


def check_bregman_equiv(spec: SampleSpec) -> ConstantReport:
    """Sample range of ``D_F(u, v) / Phi(u, v)``; it must stay positive and finite."""
    mesh, p = spec.mesh, spec.p
    viol = used = 0
    lo, hi = np.inf, -np.inf
    for u, v in sample_pairs(spec):
        d, ph = _bregman_phi(mesh, p, u, v)
        if ph == 0.0:
            continue
        used += 1
        r = d / ph
        if not (np.isfinite(r) and r > 0.0):
            viol += 1
            continue
        lo, hi = min(lo, r), max(hi, r)
    return ConstantReport(
        "bregman_equiv", "bregman_over_phi", lo, hi, viol, used, spec.seed,
        {"mu_phi_lower": lo, "L_phi_upper": hi},
        note="(mu_phi estimate is a sample min, L_phi estimate a sample max)",
    )


def _bl_ratios(xi, eta, p):
    diff = xi - eta
    dn2 = np.einsum("nd,nd->n", diff, diff)
    keep = dn2 > 0
    xi, eta, diff, dn2 = xi[keep], eta[keep], diff[keep], dn2[keep]
    fd = flux(xi, p) - flux(eta, p)
    weight = (np.linalg.norm(xi, axis=1) + np.linalg.norm(eta, axis=1)) ** (p - 2.0)
    upper = np.linalg.norm(fd, axis=1) / (np.sqrt(dn2) * weight)
    lower = np.einsum("nd,nd->n", fd, diff) / (dn2 * weight)
    return upper, lower


def _bl_stress(grid):
    """Deterministic grid: ``xi = (1, 0)``, ``eta = s (cos a, sin a)``.  Both ratios are
    invariant under rotation, common scaling and swapping, so this covers every case."""
    s = np.linspace(0.0, 1.0, grid)
    a = np.linspace(0.0, np.pi, grid)
    S, A = np.meshgrid(s, a)
    eta = np.column_stack([(S * np.cos(A)).ravel(), (S * np.sin(A)).ravel()])
    xi = np.tile([1.0, 0.0], (eta.shape[0], 1))
    return xi, eta


def _bl_random(rng, samples):
    xi = rng.standard_normal((samples, 2))
    eta = rng.standard_normal((samples, 2))
    k = samples // 10
    if k:
        # axis-aligned and nearly parallel pairs
        xi[:k, 1] = 0.0
        eta[:k, 1] = 0.0
        eta[k : 2 * k] = xi[k : 2 * k] * (1.0 + 1e-3 * rng.standard_normal((k, 1)))
    return xi, eta


def check_bl_inequalities(p: float, samples: int = 100_000, seed: int = 0, grid: int = 401,
                          widen=0.01):
    """Estimate the best ``C1`` and ``C2`` of the two vector inequalities and re-validate.

    Phase one takes the extreme ratios over a dense stress grid plus ``samples``
    random pairs.  Phase two draws a fresh set (seed + 1) and counts pairs that
    break the estimates widened by ``widen``.  Returns ``(C1_report, C2_report)``.
    """
    if not p > 1.0:
        raise ValueError("p must exceed 1")
    rng = np.random.default_rng(seed)
    xs, es = _bl_stress(grid)
    xr, er = _bl_random(rng, samples)
    up, low = _bl_ratios(np.vstack([xs, xr]), np.vstack([es, er]), p)
    C1, C2 = float(up.max()), float(low.min())
    fresh = np.random.default_rng(seed + 1)
    up2, low2 = _bl_ratios(*_bl_random(fresh, samples), p)
    v1 = int(np.sum(up2 > C1 * (1.0 + widen)))
    v2 = int(np.sum(low2 < C2 / (1.0 + widen)))
    sane = np.isfinite(C1) and np.isfinite(C2) and 0.0 < C2 <= C1 * (1.0 + REL_TOL)
    if not sane:
        v1 += 1
        v2 += 1
    n = int(up.size)
    return (
        ConstantReport("bl_upper", "C1", float(up.min()), C1, v1, n, seed, {"C1": C1},
                       note="(sample max; revalidated on a fresh seed)"),
        ConstantReport("bl_lower", "C2", C2, float(low.max()), v2, n, seed, {"C2": C2},
                       note="(sample min; revalidated on a fresh seed)"),
    )


def check_df_as_distance(spec: SampleSpec) -> ConstantReport:
    """Bregman distance as its own distance-like function.

    Estimates ``C1_low = min D_F(v+tw, v) / (t^max(p,2) D_F(v+w, v))``,
    ``C1_high = max D_F(v+tw, v) / (t^min(p,2) D_F(v+w, v))`` and
    ``C2 = max D_F(u, v) / D_F(v, u)``, then checks them against what the
    scaling, symmetry and equivalence inequalities imply when the equivalence
    constants are the sample extremes over the very pairs evaluated here:
    ``C1_low >= mu/L``, ``C1_high <= L/mu``, ``C2 <= 2^|p-2| L/mu``.
    """
    mesh, p = spec.mesh, spec.p
    pl, ph = min(p, 2.0), max(p, 2.0)
    trng = np.random.default_rng([spec.seed, 1])
    c1_lo, c1_hi, c2 = np.inf, -np.inf, -np.inf
    mu, L = np.inf, -np.inf
    used = 0
    for u, v in sample_pairs(spec):
        gv, gw = _grads(mesh, v), _grads(mesh, u - v)
        gu = gv + gw
        full_d = _integral(mesh, bregman_density(gv, gw, p))
        full_phi = _integral(mesh, phi_density(gw, gv, p))
        if full_phi == 0.0:
            continue
        used += 1
        back_d = _integral(mesh, bregman_density(gu, -gw, p))
        back_phi = _integral(mesh, phi_density(-gw, gu, p))
        for d, f in ((full_d, full_phi), (back_d, back_phi)):
            mu, L = min(mu, d / f), max(L, d / f)
        c2 = max(c2, full_d / back_d)
        for t in (*T_GRID[1:], float(trng.uniform(1e-3, 1.0))):
            d = _integral(mesh, bregman_density(gv, t * gw, p))
            f = _integral(mesh, phi_density(t * gw, gv, p))
            mu, L = min(mu, d / f), max(L, d / f)
            c1_lo = min(c1_lo, d / (t**ph * full_d))
            c1_hi = max(c1_hi, d / (t**pl * full_d))
    viol = 0
    if used:
        k = L / mu
        viol += int(_exceeds(1.0 / k, c1_lo))
        viol += int(_exceeds(c1_hi, k))
        viol += int(_exceeds(c2, 2.0 ** abs(p - 2.0) * k))
    return ConstantReport(
        "df_distance", "df_distance", c1_lo, c1_hi, viol, used, spec.seed,
        {"C1_low": c1_lo, "C1_high": c1_hi, "C2_df": c2, "mu_over_L": mu / L if used else math.nan},
    )


def c0_report(dec, data, samples=200, seed=0) -> ConstantReport:
    """Sample maximum of the stable-split ratio for a decomposition (never a violation)."""
    from .decomposition import measure_C0

    c0 = measure_C0(dec, data, samples, seed)
    return ConstantReport("stable_split", "C0", c0, c0, 0, samples, seed, {"C0": c0},
                          note="(sample max; a lower bound on the true constant)")


def run_suite(p: float, m: int = 8, samples: int = 1000, seed: int = 0, bl_samples=100_000,
              phi_scale=1.0):
    """All sampling checks for one exponent; returns the list of reports."""
    from .mesh import build_uniform_mesh

    spec = SampleSpec(build_uniform_mesh(m), p, samples, seed)
    reports = [
        check_scaling(spec, phi_scale=phi_scale),
        check_symmetry(spec, phi_scale=phi_scale),
        check_bregman_equiv(spec),
        *check_bl_inequalities(p, bl_samples, seed),
        check_df_as_distance(spec),
    ]
    return reports


def write_reports(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check", "name", "value", "samples", "violations", "seed"])
        for r in reports:
            w.writerows(r.rows())
