"""Command line driver: ``plapschwarz run | verify | rates``.

Exit codes: 0 success, 2 invalid configuration or missing input, 3 subsolver
or outer-iteration failure, 4 an inequality check (or rate bound) failed.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VIOLATION = 0, 2, 3, 4

FIG1_DESK = [
    (H_inv, H_inv * ratio, layers)
    for H_inv in (2, 4)
    for ratio in (8, 16)
    for layers in (1, 2, 4)
]


class ConfigError(ValueError):
    pass


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def read_config(path, parser):
    """Flat ``key=value`` file; keys are long flag names without dashes
    (``h-inv`` and ``h_inv`` both work).  Returns parser defaults to apply."""
    dests = {a.dest: a for a in parser._actions}
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            dest = key.strip().replace("-", "_")
            action = dests.get(dest)
            if action is None or dest in ("help", "config"):
                raise ConfigError(f"{path}:{lineno}: unknown key {key.strip()!r}")
            value = value.strip()
            if action.nargs == 0:
                out[dest] = _bool(value)
            elif action.nargs in ("+", "*"):
                out[dest] = [action.type(v) if action.type else v for v in value.split()]
            else:
                out[dest] = action.type(value) if action.type else value
    return out


def _add_fista(p):
    g = p.add_argument_group("local solver")
    g.add_argument("--fista-tol", type=float, default=1e-10, help="stop when scale*|dw| < tol")
    g.add_argument("--fista-max-iters", type=int, default=50_000)
    g.add_argument("--backtrack", type=float, default=0.5)
    g.add_argument("--grow", type=float, default=1.25, help="step growth tried each iteration")
    g.add_argument("--no-restart", action="store_true")
    g.add_argument("--backend", choices=["compiled", "python"], default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="plapschwarz", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="two-level additive Schwarz run, CSV of energy errors")
    run.add_argument("--config", help="key=value file; command line flags override it")
    run.add_argument("--p", type=float, default=4.0)
    run.add_argument("--f", type=float, default=1.0, help="constant source term")
    run.add_argument("--h-inv", type=int, default=32, help="fine mesh size 1/h")
    run.add_argument("--H-inv", type=int, default=4, help="coarse mesh size 1/H")
    run.add_argument("--delta-layers", type=int, default=1, help="overlap in fine layers")
    run.add_argument("--tau", type=float, default=None, help="relaxation (default 1/(colors+1))")
    run.add_argument("--iters", type=int, default=200, help="maximum outer iterations")
    run.add_argument("--obstacle", action="store_true", help="disk obstacle centred at (.5,.5)")
    run.add_argument("--obstacle-height", type=float, default=0.02)
    run.add_argument("--obstacle-radius", type=float, default=0.25)
    run.add_argument("--seed", type=int, default=0, help="recorded for provenance")
    run.add_argument("--serial", action="store_true", help="solve subproblems one by one")
    run.add_argument("--workers", type=int, default=None, help="thread pool size")
    run.add_argument("--budget", type=int, default=20_000, help="reference solve iterations")
    run.add_argument("--cache-dir", default=".asm_cache", help="reference solution cache")
    run.add_argument("--no-cache", action="store_true")
    run.add_argument("--no-early-stop", action="store_true",
                     help="keep iterating below the error floor")
    run.add_argument("--omit-timing", action="store_true",
                     help="write nan wall times so reruns are byte identical")
    run.add_argument("--preset", choices=["fig1-desk"], default=None,
                     help="sweep H/h in {8,16}, delta in {h,2h,4h}, H in {1/2,1/4}")
    run.add_argument("--out", default=None, help="CSV file (directory for --preset)")
    _add_fista(run)

    ver = sub.add_parser("verify", help="sampling checks of the analytic inequalities")
    ver.add_argument("--config", help="key=value file; command line flags override it")
    ver.add_argument("--p", type=float, nargs="+", default=[4.0])
    ver.add_argument("--h-inv", type=int, default=8, help="mesh for function samples")
    ver.add_argument("--samples", type=int, default=1000)
    ver.add_argument("--bl-samples", type=int, default=100_000)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--c0", action="store_true",
                     help="also estimate the stable-split constant on a decomposition")
    ver.add_argument("--c0-h-inv", type=int, default=32)
    ver.add_argument("--c0-H-inv", type=int, default=4)
    ver.add_argument("--delta-layers", type=int, default=1)
    ver.add_argument("--c0-samples", type=int, default=200)
    ver.add_argument("--out", default=None, help="report CSV")
    ver.add_argument("--phi-scale", type=float, default=1.0, help=argparse.SUPPRESS)

    rates = sub.add_parser("rates", help="observed rate vs guaranteed bound and decay shape")
    rates.add_argument("--config", help="key=value file; command line flags override it")
    rates.add_argument("--csv", required=False, help="CSV written by 'run'")
    rates.add_argument("--verify", dest="verify_csv", default=None,
                       help="CSV written by 'verify' (needs mu_phi_lower; C0 if present)")
    rates.add_argument("--tail", type=float, default=0.5, help="tail fraction for the fit")
    rates.add_argument("--c0-samples", type=int, default=200,
                       help="samples when C0 must be measured here")
    rates.add_argument("--seed", type=int, default=0)
    rates.add_argument("--out", default=None, help="overlay CSV")
    return parser


def parse(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        try:
            defaults = read_config(args.config, subparser)
        except (OSError, ConfigError, argparse.ArgumentTypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _fista_cfg(args):
    from .subsolver import FistaConfig

    return FistaConfig(
        backtrack_factor=args.backtrack,
        grow_factor=args.grow,
        tol=args.fista_tol,
        max_iters=args.fista_max_iters,
        restart=not args.no_restart,
    )


def _schwarz_cfg(args, H_inv, h_inv, layers):
    from .decomposition import Obstacle, build_decomposition
    from .fem import ProblemData
    from .mesh import build_mesh_pair
    from .schwarz import SchwarzConfig

    if h_inv < 2 or H_inv < 1 or h_inv % H_inv:
        raise ConfigError(f"need 1/h a multiple of 1/H, got h-inv={h_inv}, H-inv={H_inv}")
    if args.iters < 0 or args.budget < 1:
        raise ConfigError("iters must be >= 0 and budget >= 1")
    pair = build_mesh_pair(H_inv, h_inv)
    dec = build_decomposition(pair, layers)
    obstacle = None
    if args.obstacle:
        obstacle = Obstacle.disk(pair.fine, args.obstacle_height, args.obstacle_radius)
    workers = 1 if args.serial else (args.workers or os.cpu_count() or 1)
    return SchwarzConfig(
        data=ProblemData(args.p, args.f),
        pair=pair,
        dec=dec,
        tau=args.tau,
        obstacle=obstacle,
        outer_iters=args.iters,
        fista=_fista_cfg(args),
        workers=workers,
        reference_budget=args.budget,
        cache_dir=None if args.no_cache else args.cache_dir,
        stop_at_floor=not args.no_early_stop,
        backend=args.backend,
    )


def _run_one(args, H_inv, h_inv, layers, out):
    from .schwarz import run_asm, write_csv

    cfg = _schwarz_cfg(args, H_inv, h_inv, layers)
    rec = run_asm(cfg)
    write_csv(rec, out, omit_timing=args.omit_timing,
              extra_meta={"seed": args.seed, "mode": "serial" if cfg.workers == 1 else "threads"})
    fit = rec.fit
    rate = "n/a" if fit is None else f"rho={fit.rho:.6f} R2={fit.r2:.5f} (tail of {fit.n_used})"
    print(f"H=1/{H_inv} h=1/{h_inv} delta={layers}h N={cfg.dec.N} tau={cfg.tau:.4g}: "
          f"{rec.iterations} iterations ({rec.stop_reason}), final error "
          f"{rec.errors[-1]:.3e}, {rate} -> {out}")
    if rec.unconverged_solves:
        print(f"  warning: {rec.unconverged_solves} subproblem solves hit the iteration cap")
    return rec


def cmd_run(args):
    if args.preset == "fig1-desk":
        outdir = Path(args.out or "fig1-desk")
        outdir.mkdir(parents=True, exist_ok=True)
        for H_inv, h_inv, layers in FIG1_DESK:
            name = f"fig1_Hinv{H_inv}_hinv{h_inv}_delta{layers}h.csv"
            _run_one(args, H_inv, h_inv, layers, outdir / name)
        return EXIT_OK
    out = args.out or f"asm_p{args.p:g}_Hinv{args.H_inv}_hinv{args.h_inv}_d{args.delta_layers}.csv"
    _run_one(args, args.H_inv, args.h_inv, args.delta_layers, out)
    return EXIT_OK


def cmd_verify(args):
    from .verify import c0_report, run_suite, write_reports

    if args.samples < 1 or args.bl_samples < 1:
        raise ConfigError("sample counts must be positive")
    reports = []
    for p in args.p:
        if not p > 1.0:
            raise ConfigError(f"p must exceed 1, got {p}")
        for r in run_suite(p, args.h_inv, args.samples, args.seed, args.bl_samples,
                           phi_scale=args.phi_scale):
            r.check = f"{r.check}@p={p:g}"
            reports.append(r)
        if args.c0:
            from .decomposition import build_decomposition
            from .fem import ProblemData
            from .mesh import build_mesh_pair

            dec = build_decomposition(build_mesh_pair(args.c0_H_inv, args.c0_h_inv),
                                      args.delta_layers)
            r = c0_report(dec, ProblemData(p), args.c0_samples, args.seed)
            r.check = f"{r.check}@p={p:g}@H_inv={args.c0_H_inv}@h_inv={args.c0_h_inv}" \
                      f"@delta={args.delta_layers}"
            reports.append(r)
    for r in reports:
        print(r.summary())
    if args.out:
        write_reports(reports, args.out)
    bad = sum(r.violations for r in reports)
    print(f"{'FAIL' if bad else 'PASS'}: {bad} violations across {len(reports)} checks")
    return EXIT_VIOLATION if bad else EXIT_OK


def _verify_value(path, name, p, geometry=None):
    import csv

    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            tags = row["check"].split("@")
            if row["name"] != name or f"p={p:g}" not in tags:
                continue
            if geometry is not None and not all(g in tags for g in geometry):
                continue
            return float(row["value"])
    return None


def cmd_rates(args):
    from .schwarz import estimate_rate, read_csv, sublinear_bound, theoretical_rate

    if not args.csv:
        raise ConfigError("rates needs --csv from a completed run")
    if not Path(args.csv).exists():
        raise ConfigError(f"missing run CSV {args.csv}")
    meta, cols = read_csv(args.csv)
    try:
        p = float(meta["p"])
        tau = float(meta["tau"])
        H_inv, h_inv = int(meta["H_inv"]), int(meta["h_inv"])
        layers = int(meta["delta_layers"])
    except KeyError as exc:
        raise ConfigError(f"{args.csv} lacks provenance key {exc}") from exc
    constrained = meta.get("obstacle", "none") != "none"
    errors = cols["energy_error"]
    fit = estimate_rate(errors, args.tail)
    print(f"observed rho = {fit.rho:.6f}  (R2 = {fit.r2:.5f}, {fit.n_used} tail points)")

    status = EXIT_OK
    if args.verify_csv:
        if not Path(args.verify_csv).exists():
            raise ConfigError(f"missing verify CSV {args.verify_csv}")
        mu = _verify_value(args.verify_csv, "mu_phi_lower", p)
        if mu is None:
            raise ConfigError(f"{args.verify_csv} has no mu_phi_lower row for p={p:g}")
        geometry = [f"H_inv={H_inv}", f"h_inv={h_inv}", f"delta={layers}"]
        C0 = _verify_value(args.verify_csv, "C0", p, geometry)
        if C0 is None:
            from .decomposition import build_decomposition, measure_C0
            from .fem import ProblemData
            from .mesh import build_mesh_pair

            dec = build_decomposition(build_mesh_pair(H_inv, h_inv), layers)
            C0 = measure_C0(dec, ProblemData(p), args.c0_samples, args.seed)
            print(f"C0 measured here ({args.c0_samples} samples): {C0:.6g}")
        bound = theoretical_rate(p, tau, mu, C0, constrained)
        print(f"mu_phi = {mu:.6g}, C0 = {C0:.6g}, tau = {tau:g} -> guaranteed rate {bound!r}")
        if fit.rho <= bound:
            print("observed rho is within the guaranteed rate")
        else:
            print("observed rho EXCEEDS the guaranteed rate")
            status = EXIT_VIOLATION

    n = cols["iter"]
    if p == 2.0:
        print("no algebraic decay overlay at p = 2: its exponent divides by max(p,2) - min(p,2) = 0")
        shape = np.full(n.shape, math.nan)
    else:
        shape = sublinear_bound(n, p, 1.0 / H_inv, layers / h_inv)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("iter,energy_error,sublinear_shape\n")
            for i, e, s in zip(n, errors, shape):
                fh.write(f"{i},{e!r},{s!r}\n")
        print(f"overlay written to {args.out}")
    else:
        step = max(1, len(n) // 10)
        print("iter  energy_error  sublinear_shape")
        for i in range(0, len(n), step):
            print(f"{n[i]:4d}  {errors[i]:.4e}  {shape[i]:.4e}")
    return status


def main(argv=None):
    from .schwarz import SchwarzError

    try:
        args = parse(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    handler = {"run": cmd_run, "verify": cmd_verify, "rates": cmd_rates}[args.command]
    try:
        return handler(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SchwarzError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
