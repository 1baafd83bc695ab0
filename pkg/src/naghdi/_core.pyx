# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
# distutils: language = c++
"""Compiled kernels: skyline Cholesky, the Newmark time loop, Jacobi-PCG on
CSR operators and multi-source Dijkstra with a distance cutoff.

Every routine here has a numpy/scipy twin in ``_fallback.py`` with the same
signature; ``naghdi.kernels`` picks one at import.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY
from libcpp.queue cimport priority_queue
from libcpp.pair cimport pair
from libcpp.vector cimport vector

cnp.import_array()

ctypedef pair[double, long long] entry


cdef inline void csr_matvec(const int[::1] indptr, const int[::1] indices,
                            const double[::1] data, const double* x,
                            double* y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(n):
        s = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            s += data[k] * x[indices[k]]
        y[i] = s


cdef inline double dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(n):
        s += a[i] * b[i]
    return s


def skyline_factor(const int[::1] indptr, const int[::1] indices,
                   const double[::1] data, Py_ssize_t n):
    """Envelope Cholesky of a symmetric CSR matrix (already permuted).

    Returns ``(first, ptr, values)``: row ``i`` of L holds columns
    ``first[i]..i`` at ``values[ptr[i]:ptr[i + 1]]``.
    """
    cdef cnp.ndarray[cnp.int64_t, ndim=1] first_a = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ptr_a = np.empty(n + 1, dtype=np.int64)
    cdef long long[::1] first = first_a
    cdef long long[::1] ptr = ptr_a
    cdef Py_ssize_t i, j, k, c, lo
    cdef long long fi
    cdef double s, d
    with nogil:
        for i in range(n):
            fi = i
            for k in range(indptr[i], indptr[i + 1]):
                c = indices[k]
                if c < fi:
                    fi = c
            first[i] = fi
        ptr[0] = 0
        for i in range(n):
            ptr[i + 1] = ptr[i] + (i - first[i] + 1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] val_a = np.zeros(ptr_a[n], dtype=np.float64)
    cdef double[::1] val = val_a
    cdef bint failed = False
    cdef Py_ssize_t bad = -1
    with nogil:
        for i in range(n):
            for k in range(indptr[i], indptr[i + 1]):
                c = indices[k]
                if c <= i:
                    val[ptr[i] + c - first[i]] += data[k]
        for i in range(n):
            for j in range(first[i], i):
                lo = first[i] if first[i] > first[j] else first[j]
                s = val[ptr[i] + j - first[i]]
                for k in range(lo, j):
                    s -= val[ptr[i] + k - first[i]] * val[ptr[j] + k - first[j]]
                val[ptr[i] + j - first[i]] = s / val[ptr[j] + j - first[j]]
            d = val[ptr[i] + i - first[i]]
            for k in range(first[i], i):
                d -= val[ptr[i] + k - first[i]] * val[ptr[i] + k - first[i]]
            if d <= 0.0:
                failed = True
                bad = i
                break
            val[ptr[i] + i - first[i]] = sqrt(d)
    if failed:
        raise np.linalg.LinAlgError(f"matrix not positive definite at pivot {bad}")
    return first_a, ptr_a, val_a


cdef void skyline_solve_ptr(const long long[::1] first, const long long[::1] ptr,
                            const double[::1] val, double* x,
                            Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(n):
        s = x[i]
        for k in range(first[i], i):
            s -= val[ptr[i] + k - first[i]] * x[k]
        x[i] = s / val[ptr[i + 1] - 1]
    for i in range(n - 1, -1, -1):
        x[i] /= val[ptr[i + 1] - 1]
        s = x[i]
        for k in range(first[i], i):
            x[k] -= val[ptr[i] + k - first[i]] * s


def skyline_solve(const long long[::1] first, const long long[::1] ptr,
                  const double[::1] val, double[::1] b):
    """Solve L L^T x = b in place (permuted ordering)."""
    cdef Py_ssize_t n = b.shape[0]
    with nogil:
        skyline_solve_ptr(first, ptr, val, &b[0], n)


def pcg(const int[::1] indptr, const int[::1] indices, const double[::1] data,
        const double[::1] b, double[::1] x, double tol, int maxiter):
    """Jacobi-preconditioned CG; ``x`` holds the initial guess and the result.

    Returns ``(iterations, relative_residual)``.
    """
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t i, k
    cdef int it = 0
    cdef double[::1] r = np.empty(n)
    cdef double[::1] z = np.empty(n)
    cdef double[::1] p = np.empty(n)
    cdef double[::1] q = np.empty(n)
    cdef double[::1] dinv = np.empty(n)
    cdef double bnorm, rz, rz_new, alpha, rnorm
    with nogil:
        for i in range(n):
            dinv[i] = 1.0
            for k in range(indptr[i], indptr[i + 1]):
                if indices[k] == i and data[k] != 0.0:
                    dinv[i] = 1.0 / data[k]
        bnorm = sqrt(dot(&b[0], &b[0], n))
        if bnorm == 0.0:
            for i in range(n):
                x[i] = 0.0
        else:
            csr_matvec(indptr, indices, data, &x[0], &q[0], n)
            for i in range(n):
                r[i] = b[i] - q[i]
                z[i] = dinv[i] * r[i]
                p[i] = z[i]
            rz = dot(&r[0], &z[0], n)
            rnorm = sqrt(dot(&r[0], &r[0], n))
            while rnorm > tol * bnorm and it < maxiter:
                csr_matvec(indptr, indices, data, &p[0], &q[0], n)
                alpha = rz / dot(&p[0], &q[0], n)
                for i in range(n):
                    x[i] += alpha * p[i]
                    r[i] -= alpha * q[i]
                    z[i] = dinv[i] * r[i]
                rz_new = dot(&r[0], &z[0], n)
                for i in range(n):
                    p[i] = z[i] + (rz_new / rz) * p[i]
                rz = rz_new
                rnorm = sqrt(dot(&r[0], &r[0], n))
                it += 1
    if bnorm == 0.0:
        return 0, 0.0
    return it, rnorm / bnorm


def newmark_loop(M, C, K, factor, double[::1] u, double[::1] v, double[::1] a,
                 double dt, double beta, double gamma, Py_ssize_t nsteps,
                 Py_ssize_t stride, forcing, bint keep_states):
    """Run ``nsteps`` Newmark steps with a skyline-factored effective matrix.

    ``M, C, K`` are ``(indptr, indices, data)`` CSR triples; ``factor`` is
    ``(perm, first, ptr, values)``; ``forcing`` is ``None`` or an array of
    shape ``(nsteps + 1, n)``. ``u, v, a`` are advanced in place.

    Returns ``(energies, dissipation, states)`` where energies are sampled
    every ``stride`` steps (and at the end), dissipation is the cumulative
    trapezoid of ``v^T C v`` at the same samples and ``states`` stacks
    ``(u, v)`` at the samples when ``keep_states`` is set.
    """
    cdef const int[::1] mp = M[0]
    cdef const int[::1] mi = M[1]
    cdef const double[::1] md = M[2]
    cdef const int[::1] cp = C[0]
    cdef const int[::1] ci = C[1]
    cdef const double[::1] cd = C[2]
    cdef const int[::1] kp = K[0]
    cdef const int[::1] ki = K[1]
    cdef const double[::1] kd = K[2]
    cdef const long long[::1] perm = factor[0]
    cdef const long long[::1] first = factor[1]
    cdef const long long[::1] ptr = factor[2]
    cdef const double[::1] val = factor[3]
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t nsamp = nsteps // stride + 1 + (1 if nsteps % stride else 0)
    energies_a = np.empty(nsamp)
    dissip_a = np.empty(nsamp)
    cdef double[::1] energies = energies_a
    cdef double[::1] dissip = dissip_a
    states_a = np.empty((nsamp if keep_states else 0, 2, n))
    cdef double[:, :, ::1] states = states_a
    cdef bint forced = forcing is not None
    cdef const double[:, ::1] F
    if forced:
        F = forcing
    cdef double[::1] w1 = np.empty(n)
    cdef double[::1] w2 = np.empty(n)
    cdef double[::1] rhs = np.empty(n)
    cdef double[::1] tmp = np.empty(n)
    cdef Py_ssize_t i, step, s = 0
    cdef double cum = 0.0, pc, nc, e
    with nogil:
        # sample 0
        csr_matvec(mp, mi, md, &v[0], &w1[0], n)
        csr_matvec(kp, ki, kd, &u[0], &w2[0], n)
        energies[0] = 0.5 * dot(&v[0], &w1[0], n) + 0.5 * dot(&u[0], &w2[0], n)
        dissip[0] = 0.0
        if keep_states:
            for i in range(n):
                states[0, 0, i] = u[i]
                states[0, 1, i] = v[i]
        s = 1
        csr_matvec(cp, ci, cd, &v[0], &w1[0], n)
        pc = dot(&v[0], &w1[0], n)
        for step in range(1, nsteps + 1):
            for i in range(n):
                tmp[i] = v[i] + (1.0 - gamma) * dt * a[i]
            csr_matvec(cp, ci, cd, &tmp[0], &w1[0], n)
            for i in range(n):
                tmp[i] = u[i] + dt * v[i] + (0.5 - beta) * dt * dt * a[i]
            csr_matvec(kp, ki, kd, &tmp[0], &w2[0], n)
            for i in range(n):
                rhs[i] = -w1[i] - w2[i]
                if forced:
                    rhs[i] += F[step, i]
            for i in range(n):
                tmp[i] = rhs[perm[i]]
            skyline_solve_ptr(first, ptr, val, &tmp[0], n)
            for i in range(n):
                rhs[perm[i]] = tmp[i]
            for i in range(n):
                u[i] = u[i] + dt * v[i] + dt * dt * ((0.5 - beta) * a[i] + beta * rhs[i])
                v[i] = v[i] + dt * ((1.0 - gamma) * a[i] + gamma * rhs[i])
                a[i] = rhs[i]
            csr_matvec(cp, ci, cd, &v[0], &w1[0], n)
            nc = dot(&v[0], &w1[0], n)
            cum += 0.5 * dt * (pc + nc)
            pc = nc
            if step % stride == 0 or step == nsteps:
                csr_matvec(mp, mi, md, &v[0], &w1[0], n)
                csr_matvec(kp, ki, kd, &u[0], &w2[0], n)
                energies[s] = 0.5 * dot(&v[0], &w1[0], n) + 0.5 * dot(&u[0], &w2[0], n)
                dissip[s] = cum
                if keep_states:
                    for i in range(n):
                        states[s, 0, i] = u[i]
                        states[s, 1, i] = v[i]
                s += 1
    return energies_a, dissip_a, states_a


def dijkstra(const int[::1] indptr, const int[::1] indices,
             const double[::1] weights, sources, double cutoff):
    """Multi-source Dijkstra; returns ``(dist, pred, origin)``.

    Vertices farther than ``cutoff`` keep ``inf`` distance and ``-1``
    predecessor/origin.
    """
    cdef Py_ssize_t n = indptr.shape[0] - 1
    dist_a = np.full(n, np.inf)
    pred_a = np.full(n, -1, dtype=np.int64)
    orig_a = np.full(n, -1, dtype=np.int64)
    cdef double[::1] dist = dist_a
    cdef long long[::1] pred = pred_a
    cdef long long[::1] orig = orig_a
    cdef long long[::1] src = np.ascontiguousarray(sources, dtype=np.int64)
    cdef priority_queue[entry] heap
    cdef entry top
    cdef Py_ssize_t k, i
    cdef long long node, nb
    cdef double d, nd
    with nogil:
        for i in range(src.shape[0]):
            node = src[i]
            dist[node] = 0.0
            orig[node] = node
            heap.push(entry(-0.0, node))
        while not heap.empty():
            top = heap.top()
            heap.pop()
            d = -top.first
            node = top.second
            if d > dist[node]:
                continue
            for k in range(indptr[node], indptr[node + 1]):
                nb = indices[k]
                nd = d + weights[k]
                if nd < dist[nb] and nd <= cutoff:
                    dist[nb] = nd
                    pred[nb] = node
                    orig[nb] = orig[node]
                    heap.push(entry(-nd, nb))
    return dist_a, pred_a, orig_a
