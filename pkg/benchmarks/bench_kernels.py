"""Compiled vs pure-Python thermal kernel: throughput and agreement.

    python benchmarks/bench_kernels.py [--steps 2000] [--repeat 5]

Times ``RCLattice.advance`` on a few mesh sizes with each backend and reports
the speed-up plus the largest temperature difference between the two.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from thermsched import kernels
from thermsched.thermal import RCLattice, ThermalParams
from thermsched.topology import build_mesh


def bench(size: int, backend: str, steps: int, repeat: int) -> tuple[float, np.ndarray]:
    mesh = build_mesh(size, size)
    lat = RCLattice.for_mesh(mesh, ThermalParams(), backend=backend)
    rng = np.random.default_rng(size)
    temps0 = 318.0 + 30.0 * rng.random(mesh.size)
    powers = 15.0 * rng.random(mesh.size)
    final = temps0.copy()
    lat.advance(final, powers, steps, np.random.default_rng(0), 358.0)

    def once():
        t = temps0.copy()
        lat.advance(t, powers, steps, np.random.default_rng(0), 358.0)

    best = min(timeit.repeat(once, number=1, repeat=repeat))
    return best, final


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--steps", type=int, default=2000, help="substeps per timed call")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", type=int, nargs="+", default=[4, 7, 12])
    args = ap.parse_args()
    try:
        kernels.get_advance("compiled")
    except ImportError:
        print("compiled kernel not built; only the python backend is available")
        return
    print(f"{'mesh':>6} {'python ms':>10} {'compiled ms':>12} {'speed-up':>9} {'max |dT| K':>11}")
    for size in args.sizes:
        t_py, f_py = bench(size, "python", args.steps, args.repeat)
        t_c, f_c = bench(size, "compiled", args.steps, args.repeat)
        diff = float(np.abs(f_py - f_c).max())
        print(f"{size:>3}x{size:<2} {1e3 * t_py:>10.2f} {1e3 * t_c:>12.2f} {t_py / t_c:>8.1f}x {diff:>11.2e}")


if __name__ == "__main__":
    main()
