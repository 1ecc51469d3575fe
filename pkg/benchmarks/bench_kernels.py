"""Compiled vs numpy index kernels on the sizes a 60x30 cantilever produces.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from adtopo import _pykernels
from adtopo.mesh import build_grid, preset_problem

try:
    from adtopo import _ckernels
except ImportError:
    _ckernels = None


def cases(nelx=60, nely=30):
    mesh = build_grid(nelx, nely)
    bc = preset_problem("cantilever", mesh)
    rows, cols = (bc.dof_map[a].ravel() for a in mesh.scatter_index)
    n = bc.nfree
    rng = np.random.default_rng(0)
    vals = rng.normal(size=rows.size)
    left, right = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
    dense = rng.normal(size=(n, n))
    return {
        "scatter_add_matrix": lambda k: k.scatter_add_matrix(np.zeros((n, n)), rows, cols, vals),
        "gather_matrix": lambda k: k.gather_matrix(dense, rows, cols),
        "gather_lowrank": lambda k: k.gather_lowrank(left, right, rows, cols),
        "scatter_add_vector": lambda k: k.scatter_add_vector(np.zeros(n), rows, vals),
        "cone_weights(r=30)": lambda k: k.cone_weights(nelx, nely, 30.0),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    impls = {"numpy": _pykernels}
    if _ckernels is not None:
        impls["cython"] = _ckernels
    else:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'kernel':<22}" + "".join(f"{name:>12}" for name in impls) + "     speedup")
    for label, fn in cases().items():
        times = {name: min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)) * 1e3
                 for name, k in impls.items()}
        line = f"{label:<22}" + "".join(f"{t:>10.2f}ms" for t in times.values())
        if "cython" in times:
            line += f"   {times['numpy'] / times['cython']:8.1f}x"
        print(line)


if __name__ == "__main__":
    main()
