"""Compare the compiled and NumPy kernels on objective evaluations and FISTA solves.

    python3 benchmarks/bench_kernels.py --h-inv 64 --repeat 5
"""

import argparse
import timeit

import numpy as np

from plapschwarz import kernels
from plapschwarz.decomposition import build_decomposition
from plapschwarz.fem import ProblemData
from plapschwarz.mesh import FeFunction, build_mesh_pair
from plapschwarz.subsolver import (
    FistaConfig,
    Subproblem,
    coarse_space,
    full_space,
    local_space,
    solve_subproblem,
)


def cases(h_inv, H_inv, p):
    pair = build_mesh_pair(H_inv, h_inv)
    dec = build_decomposition(pair, 1)
    rng = np.random.default_rng(0)
    base = FeFunction(pair.fine, 0.01 * rng.random(pair.fine.n_dofs))
    data = ProblemData(p, 1.0)
    mid = dec.N // 2 + 1
    for space in (local_space(dec, mid), coarse_space(pair), full_space(pair.fine)):
        yield space.label, Subproblem(base, space, data), rng.standard_normal(space.n) * 1e-3


def best(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h-inv", type=int, default=64)
    ap.add_argument("--H-inv", type=int, default=8)
    ap.add_argument("--p", type=float, default=4.0)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--fista-iters", type=int, default=200)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled kernels are not built; only the NumPy backend is available")
    cfg = FistaConfig(tol=0.0, max_iters=args.fista_iters)
    print(f"p={args.p:g} H=1/{args.H_inv} h=1/{args.h_inv}, best of {args.repeat}")
    print(f"{'space':<12} {'dofs':>6} {'task':<10} " + " ".join(f"{b:>12}" for b in backends)
          + ("     speedup" if len(backends) == 2 else ""))
    for label, sp_, w in cases(args.h_inv, args.H_inv, args.p):
        g = np.empty_like(w)
        rows = {
            "objective": lambda b: best(lambda: sp_.local_objective(w, g, backend=b),
                                        args.repeat),
            "fista": lambda b: best(lambda: solve_subproblem(sp_, cfg, backend=b),
                                    max(1, args.repeat // 2)),
        }
        for task, run in rows.items():
            times = [run(b) for b in backends]
            line = f"{label:<12} {sp_.space.n:>6} {task:<10} " + " ".join(
                f"{t * 1e3:>10.3f}ms" for t in times)
            if len(times) == 2:
                line += f" {times[1] / times[0]:>10.1f}x"
            print(line)


if __name__ == "__main__":
    main()
