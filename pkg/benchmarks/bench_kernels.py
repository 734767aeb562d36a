"""Time the compiled and numpy bond kernels on the same bond sets.

Usage: python3 benchmarks/bench_kernels.py [--h 0.0625] [--eps 0.25] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from pdfem import kernels
from pdfem.assembly import Discretization
from pdfem.geometry import Box, build_uniform_mesh
from pdfem.potential import PotentialSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--h", type=float, default=1 / 16)
    ap.add_argument("--eps", type=float, default=0.25)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    mesh = build_uniform_mesh(Box.unit(args.dim), args.h)
    disc = Discretization.build(mesh, PotentialSpec(1.0, 1.0, "linear_decay", args.dim), args.eps)
    rng = np.random.default_rng(0)
    U = 1e-2 * rng.standard_normal((mesh.n_nodes, args.dim))
    V = 1e-2 * rng.standard_normal((mesh.n_nodes, args.dim))
    c, beta = disc.spec.c, disc.spec.beta
    nb, gb = disc.node_bonds, disc.gauss_bonds
    print(f"{args.dim}D h={args.h:g} eps={args.eps:g}: {nb.n_points} nodes, {gb.n_points} quadrature points")

    cases = {
        "point_force (nodes)": lambda b: kernels.point_force(nb, U, c, beta, False, backend=b),
        "energy_grad (gauss)": lambda b: kernels.energy_grad(gb, U, c, beta, False, backend=b),
        "bilinear (gauss)": lambda b: kernels.bilinear(gb, U, V, c, beta, True, backend=b),
    }
    backends = kernels.available_backends()
    print(f"{'kernel':<22}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, fn in cases.items():
        times = []
        for b in backends:
            fn(b)
            times.append(min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)))
        row = f"{name:<22}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[1] / times[0]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
