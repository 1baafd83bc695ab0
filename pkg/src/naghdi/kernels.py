"""Backend selection for the hot kernels.

The compiled extension (``naghdi._core``) is used when it imports and the
environment variable ``NAGHDI_PURE_PYTHON`` is unset; otherwise everything
runs on the numpy/scipy twins in ``naghdi._fallback``. Each public function
takes ``backend=`` to force one side, which is how the tests and the
benchmark compare them.
"""

import os

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from . import _fallback

try:
    if os.environ.get("NAGHDI_PURE_PYTHON"):
        raise ImportError("pure-python backend requested")
    from . import _core
except ImportError:  # extension not built
    _core = None

BACKEND = "compiled" if _core is not None else "python"


def _pick(backend):
    backend = backend or BACKEND
    if backend not in ("compiled", "python"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "compiled" and _core is None:
        raise RuntimeError("compiled backend requested but naghdi._core is not built")
    return backend


def _csr_triple(A):
    A = sp.csr_matrix(A)
    A.sort_indices()
    return (np.ascontiguousarray(A.indptr, dtype=np.int32),
            np.ascontiguousarray(A.indices, dtype=np.int32),
            np.ascontiguousarray(A.data, dtype=np.float64))


class SkylineFactor:
    """RCM-ordered envelope Cholesky factor built by the compiled kernel."""

    kind = "skyline"

    def __init__(self, A):
        A = sp.csr_matrix(A)
        self.n = A.shape[0]
        perm = reverse_cuthill_mckee(A, symmetric_mode=True).astype(np.int64)
        Ap = A[perm][:, perm]
        first, ptr, val = _core.skyline_factor(*_csr_triple(Ap), self.n)
        self.perm = perm
        self.first, self.ptr, self.values = first, ptr, val

    @property
    def arrays(self):
        return self.perm, self.first, self.ptr, self.values

    def solve(self, b):
        x = np.ascontiguousarray(np.asarray(b, dtype=float)[self.perm])
        _core.skyline_solve(self.first, self.ptr, self.values, x)
        out = np.empty_like(x)
        out[self.perm] = x
        return out


def factorize(A, backend=None):
    """Factor a sparse SPD matrix; the result exposes ``solve(b)``."""
    if _pick(backend) == "compiled":
        return SkylineFactor(A)
    return _fallback.factorize(A)


def is_positive_definite(A, backend=None) -> bool:
    """Whether a sparse symmetric matrix admits a Cholesky/LDL^T factor
    with positive pivots."""
    try:
        if _pick(backend) == "compiled":
            SkylineFactor(A)
            return True
        return _fallback.is_positive_definite(A)
    except np.linalg.LinAlgError:
        return False


def pcg(A, b, x0=None, tol=1e-10, maxiter=10_000, backend=None):
    """Jacobi-preconditioned conjugate gradients.

    Returns ``(x, iterations, relative_residual)``.
    """
    if _pick(backend) == "python":
        return _fallback.pcg(A, b, x0, tol, maxiter)
    b = np.ascontiguousarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    it, res = _core.pcg(*_csr_triple(A), b, x, tol, maxiter)
    return x, it, res


def newmark_loop(M, C, K, factor, u, v, a, dt, beta, gamma, nsteps, stride,
                 forcing=None, keep_states=False, backend=None):
    """Advance ``(u, v, a)`` in place by ``nsteps`` Newmark steps.

    ``factor`` must factor ``M + gamma*dt*C + beta*dt**2*K``. Returns the
    sampled energies, cumulative dissipation and optional state snapshots.
    """
    backend = _pick(backend)
    if backend == "compiled" and isinstance(factor, SkylineFactor):
        if forcing is not None:
            forcing = np.ascontiguousarray(forcing, dtype=float)
        return _core.newmark_loop(
            _csr_triple(M), _csr_triple(C), _csr_triple(K), factor.arrays,
            u, v, a, float(dt), float(beta), float(gamma), int(nsteps),
            int(stride), forcing, bool(keep_states))
    return _fallback.newmark_loop(M, C, K, factor, u, v, a, dt, beta, gamma,
                                  nsteps, stride, forcing, keep_states)


def dijkstra(graph, sources, cutoff=np.inf, backend=None):
    """Multi-source shortest paths on a weighted undirected CSR graph.

    Returns ``(dist, predecessor, origin)``; unreachable or beyond-cutoff
    vertices carry ``inf`` and ``-1``.
    """
    if _pick(backend) == "python":
        return _fallback.dijkstra(graph, sources, cutoff)
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    indptr, indices, data = _csr_triple(graph)
    return _core.dijkstra(indptr, indices, data, sources, float(cutoff))
