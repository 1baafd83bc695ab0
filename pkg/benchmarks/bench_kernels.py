"""Compiled vs pure-Python kernels on a plate system.

    python3 benchmarks/bench_kernels.py [resolution] [repeats]
"""

import sys
import time

import numpy as np
import scipy.sparse as sp

from naghdi import kernels
from naghdi.forms import MaterialParams, assemble
from naghdi.geometry import Surface
from naghdi.mesh import plate


def best_of(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main(n=20, repeats=3):
    if kernels._core is None:
        sys.exit("compiled extension not built; run pip install -e . --no-build-isolation")
    surf = Surface(plate(n))
    sysm = assemble(surf, MaterialParams(), np.ones(surf.mesh.n_vertices))
    dt, steps = 1e-3, 200
    eff = sp.csr_matrix(sysm.mass + 0.5 * dt * sysm.damping + 0.25 * dt * dt * sysm.stiffness)
    rng = np.random.default_rng(0)
    b = rng.standard_normal(sysm.n_dofs)
    graph = surf.mesh.edge_graph
    factors = {be: kernels.factorize(eff, be) for be in ("compiled", "python")}

    def newmark(backend):
        fac = kernels.factorize(eff, backend)
        u = 1e-3 * rng.standard_normal(sysm.n_dofs)
        v, a = np.zeros_like(u), np.zeros_like(u)
        kernels.newmark_loop(sysm.mass, sysm.damping, sysm.stiffness, fac, u, v, a, dt,
                             0.25, 0.5, steps, 1, None, False, backend)

    cases = {
        "factorize": lambda be: kernels.factorize(eff, be),
        "solve x20": lambda be: [factors[be].solve(b) for _ in range(20)],
        "pcg": lambda be: kernels.pcg(eff, b, tol=1e-10, backend=be),
        f"newmark {steps} steps": newmark,
        "dijkstra": lambda be: kernels.dijkstra(graph, [0], backend=be),
    }
    print(f"plate{n}: {sysm.n_dofs} free DOFs, best of {repeats}")
    print(f"{'kernel':<20}{'compiled [s]':>14}{'python [s]':>14}{'speedup':>10}")
    for name, fn in cases.items():
        tc = best_of(lambda: fn("compiled"), repeats)
        tp = best_of(lambda: fn("python"), repeats)
        print(f"{name:<20}{tc:>14.4f}{tp:>14.4f}{tp / tc:>10.1f}")


if __name__ == "__main__":
    args = [int(x) for x in sys.argv[1:3]]
    main(*args)
