"""Pure numpy/scipy versions of the compiled kernels in ``_core.pyx``."""

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.sparse.linalg import splu


class LUFactor:
    """Sparse LU of a symmetric positive definite matrix (SuperLU)."""

    kind = "splu"

    def __init__(self, A):
        self._lu = splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A")
        self.n = A.shape[0]

    def solve(self, b):
        return self._lu.solve(np.asarray(b, dtype=float))


def factorize(A):
    return LUFactor(A)


def is_positive_definite(A):
    # symmetric ordering with diagonal pivots only: the U diagonal carries the inertia
    lu = splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
              options={"SymmetricMode": True})
    return bool(np.all(lu.U.diagonal() > 0))


def pcg(A, b, x0=None, tol=1e-10, maxiter=10_000):
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    d = A.diagonal()
    dinv = np.where(d != 0.0, 1.0 / np.where(d != 0.0, d, 1.0), 1.0)
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    it = 0
    rnorm = np.linalg.norm(r)
    while rnorm > tol * bnorm and it < maxiter:
        q = A @ p
        alpha = rz / (p @ q)
        x += alpha * p
        r -= alpha * q
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        rnorm = np.linalg.norm(r)
        it += 1
    return x, it, rnorm / bnorm


def newmark_loop(M, C, K, factor, u, v, a, dt, beta, gamma, nsteps, stride,
                 forcing=None, keep_states=False):
    n = u.shape[0]
    nsamp = nsteps // stride + 1 + (1 if nsteps % stride else 0)
    energies = np.empty(nsamp)
    dissip = np.empty(nsamp)
    states = np.empty((nsamp if keep_states else 0, 2, n))
    energies[0] = 0.5 * v @ (M @ v) + 0.5 * u @ (K @ u)
    dissip[0] = 0.0
    if keep_states:
        states[0, 0] = u
        states[0, 1] = v
    s = 1
    cum = 0.0
    pc = v @ (C @ v)
    for step in range(1, nsteps + 1):
        rhs = -(C @ (v + (1.0 - gamma) * dt * a)) - K @ (u + dt * v + (0.5 - beta) * dt * dt * a)
        if forcing is not None:
            rhs += forcing[step]
        a_new = factor.solve(rhs)
        u += dt * v + dt * dt * ((0.5 - beta) * a + beta * a_new)
        v += dt * ((1.0 - gamma) * a + gamma * a_new)
        a[:] = a_new
        nc = v @ (C @ v)
        cum += 0.5 * dt * (pc + nc)
        pc = nc
        if step % stride == 0 or step == nsteps:
            energies[s] = 0.5 * v @ (M @ v) + 0.5 * u @ (K @ u)
            dissip[s] = cum
            if keep_states:
                states[s, 0] = u
                states[s, 1] = v
            s += 1
    return energies, dissip, states


def dijkstra(graph, sources, cutoff=np.inf):
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    dist, pred, orig = csgraph.dijkstra(
        graph, directed=False, indices=sources, min_only=True,
        return_predecessors=True, limit=cutoff)
    pred = np.where(pred < 0, -1, pred).astype(np.int64)
    orig = np.where(orig < 0, -1, orig).astype(np.int64)
    orig[sources] = sources
    return dist, pred, orig
