"""Discrete Riemannian calculus on triangle meshes.

Layouts used throughout the package:

* scalar vertex field: ``(nv,)``
* tangent vertex field: ``(nv, 2)`` components in the vertex frame
* face 1-form / face vector: ``(nf, 2)`` in the face frame
* face tensor: ``(nf, 2, 2)`` in the face frame, ``T[f, i, j] = T(f_i, f_j)``
* face 3-tensor: ``(nf, 2, 2, 2)``, ``DT[f, k, i, j] = (nabla_{f_j} T)(f_k, f_i)``

The covariant differential follows ``DW[f, i, j] = <nabla_{f_j} W, f_i>``,
so a linear field ``W(x) = A x`` on a plate has ``DW = A``.
"""

from __future__ import annotations

import logging
from math import factorial
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import kernels
from .mesh import MeshError, SurfaceMesh

log = logging.getLogger(__name__)

EPS = np.array([[0.0, 1.0], [-1.0, 0.0]])
IDENTITY = np.eye(2)


def _normalize(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _tangent_basis(normals, reference=None, points=None):
    """Orthonormal (e1, e2) with e1 the projection of a reference direction."""
    n = len(normals)
    if reference is None:
        axes = np.eye(3)
        dots = np.abs(normals @ axes.T)
        pick = np.argmax(dots <= dots.min(axis=1, keepdims=True) + 1e-9, axis=1)
        ref = axes[pick]
    elif callable(reference):
        ref = np.asarray(reference(points), dtype=float)
    else:
        ref = np.broadcast_to(np.asarray(reference, dtype=float), (n, 3))
    e1 = ref - (ref * normals).sum(axis=1, keepdims=True) * normals
    bad = np.linalg.norm(e1, axis=1) < 1e-8
    if bad.any():
        alt = np.eye(3)[np.argmin(np.abs(normals[bad]), axis=1)]
        e1[bad] = alt - (alt * normals[bad]).sum(axis=1, keepdims=True) * normals[bad]
    e1 = _normalize(e1)
    e2 = np.cross(normals, e1)
    return np.stack([e1, e2], axis=1)


@dataclass(frozen=True, eq=False)
class Frames:
    """Per-vertex and per-face orthonormal frames; rows are (e1, e2)."""

    vertex_basis: np.ndarray  # (nv, 2, 3)
    vertex_normals: np.ndarray  # (nv, 3)
    face_basis: np.ndarray  # (nf, 2, 3)
    face_normals: np.ndarray  # (nf, 3)


def build_frames(mesh: SurfaceMesh, reference=None) -> Frames:
    """Frames with N = e1 x e2; vertex normals use Max's corner weights.

    ``reference`` fixes e1 as the tangential projection of a direction (a
    3-vector, or a callable of the points); by default the coordinate axis
    least aligned with the normal is used.
    """
    p = mesh.vertices[mesh.triangles]
    cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    norm = np.linalg.norm(cross, axis=1)
    scale = mesh.mean_edge_length ** 2
    bad = np.flatnonzero(norm <= 2e-14 * scale)
    if bad.size:
        raise MeshError(f"degenerate triangle at face {int(bad[0])}")
    fn = cross / norm[:, None]
    # Max's weights: (a x b)/(|a|^2 |b|^2) per incident corner, exact for
    # vertices of an inscribed sphere
    vn = np.zeros_like(mesh.vertices)
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        w = (a * a).sum(axis=1) * (b * b).sum(axis=1)
        np.add.at(vn, mesh.triangles[:, k], np.cross(a, b) / w[:, None])
    vn = _normalize(vn)
    if mesh.boundary_vertices.size:
        b = mesh.boundary_vertices
        vn[b] = _span_project(mesh, fn, b, _jet_normals(mesh, vn, b))
    return Frames(
        vertex_basis=_tangent_basis(vn, reference, mesh.vertices),
        vertex_normals=vn,
        face_basis=_tangent_basis(fn, reference, mesh.face_centroids),
        face_normals=fn,
    )


def _jet_normals(mesh, normals, which):
    """Normals from a quadratic height fit over the 2-ring.

    Corner weights only see a one-sided fan at the boundary, which tilts
    the normal by half a cell; the jet fit removes that bias.
    """
    g = mesh.edge_graph
    ring2 = (g @ g + g).tocsr()
    X = mesh.vertices
    out = np.empty((len(which), 3))
    for k, v in enumerate(which):
        nb = ring2.indices[ring2.indptr[v]:ring2.indptr[v + 1]]
        nb = nb[nb != v]
        n0 = normals[v]
        t = _tangent_basis(n0[None])[0]
        d = X[nb] - X[v]
        uv = d @ t.T
        w = d @ n0
        A = np.column_stack([uv[:, 0], uv[:, 1], uv[:, 0] ** 2, uv[:, 0] * uv[:, 1], uv[:, 1] ** 2])
        if len(nb) < 5 or np.linalg.matrix_rank(A) < 5:
            out[k] = n0
            continue
        coef = np.linalg.lstsq(A, w, rcond=None)[0]
        n = n0 - coef[0] * t[0] - coef[1] * t[1]
        out[k] = n / np.linalg.norm(n)
    return out


def _span_project(mesh, face_normals, which, normals):
    """Project onto the span of the face normals around the 2-ring.

    On a ruled or flat patch the face normals share an orthogonal direction
    (the ruling); the vertex normal should too, which the jet fit only gets
    up to its truncation error.
    """
    g = mesh.edge_graph
    ring2 = (g @ g + g).tocsr()
    inc = mesh.vertex_face_incidence.tocsr()
    out = normals.copy()
    for k, v in enumerate(which):
        nb = np.append(ring2.indices[ring2.indptr[v]:ring2.indptr[v + 1]], v)
        F = face_normals[np.unique(inc[nb].indices)]
        _, sv, Vt = np.linalg.svd(F, full_matrices=False)
        keep = Vt[sv > 1e-10 * sv[0]]
        if len(keep) < 3:
            n = keep.T @ (keep @ normals[k])
            out[k] = n / np.linalg.norm(n)
    return out


def _rotation_between(a, b):
    """Smallest rotations taking unit vectors a -> b (batched, (k, 3, 3))."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    v = np.cross(a, b)
    c = (a * b).sum(axis=1)
    vx = np.zeros((len(a), 3, 3))
    vx[:, 0, 1], vx[:, 0, 2] = -v[:, 2], v[:, 1]
    vx[:, 1, 0], vx[:, 1, 2] = v[:, 2], -v[:, 0]
    vx[:, 2, 0], vx[:, 2, 1] = -v[:, 1], v[:, 0]
    k = 1.0 / np.maximum(1.0 + c, 1e-12)
    return np.eye(3) + vx + (vx @ vx) * k[:, None, None]


@dataclass(frozen=True, eq=False)
class FundamentalForms:
    Pi: np.ndarray  # (nf, 2, 2)
    c: np.ndarray  # (nf, 2, 2)
    eps: np.ndarray  # (nf, 2, 2)


class Surface:
    """A mesh with its frames and the discrete operators built on them."""

    def __init__(self, mesh: SurfaceMesh, frames: Frames | None = None, reference=None):
        self.mesh = mesh
        self.frames = frames if frames is not None else build_frames(mesh, reference)

    # --- per-face building blocks -------------------------------------------------

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """``B[f, a, j] = d(lambda_a)/d(f_j)`` for the barycentric hats."""
        m = self.mesh
        p = m.vertices[m.triangles]
        n = self.frames.face_normals
        area2 = 2.0 * m.face_areas
        grads = np.empty((m.n_faces, 3, 3))
        for a in range(3):
            opp = p[:, (a + 2) % 3] - p[:, (a + 1) % 3]
            grads[:, a] = np.cross(n, opp) / area2[:, None]
        return np.einsum("fak,fjk->faj", grads, self.frames.face_basis)

    @cached_property
    def vertex_to_face(self) -> np.ndarray:
        """``P[f, a] = F_f E_a^T``: vertex-frame components -> face frame."""
        m = self.mesh
        E = self.frames.vertex_basis[m.triangles]  # (nf, 3, 2, 3)
        F = self.frames.face_basis  # (nf, 2, 3)
        return np.einsum("fik,fajk->faij", F, E)

    @cached_property
    def face_to_vertex_average(self) -> sp.csr_matrix:
        """Area-weighted incidence average, (nv, nf)."""
        inc = self.mesh.vertex_face_incidence.multiply(self.mesh.face_areas[None, :]).tocsr()
        w = np.asarray(inc.sum(axis=1)).ravel()
        return sp.diags(1.0 / w) @ inc

    @cached_property
    def forms(self) -> FundamentalForms:
        return fundamental_forms(self)

    @cached_property
    def Pi_derivative(self) -> np.ndarray:
        return tensor_derivative(self, self.forms.Pi)

    # --- fields -------------------------------------------------------------------

    def gradient(self, w: np.ndarray) -> np.ndarray:
        """Per-face gradient of a P1 scalar field, as a 1-form in the face frame."""
        return np.einsum("faj,fa->fj", self.basis_gradients, np.asarray(w)[self.mesh.triangles])

    def differential(self, W: np.ndarray) -> np.ndarray:
        """Covariant differential of a tangent vertex field, per face."""
        Wa = np.asarray(W)[self.mesh.triangles]  # (nf, 3, 2)
        return np.einsum("faik,fak,faj->fij", self.vertex_to_face, Wa, self.basis_gradients)

    def face_scalar(self, w: np.ndarray) -> np.ndarray:
        return np.asarray(w)[self.mesh.triangles].mean(axis=1)

    def face_vector(self, W: np.ndarray) -> np.ndarray:
        Wa = np.asarray(W)[self.mesh.triangles]
        return np.einsum("faik,fak->fi", self.vertex_to_face, Wa) / 3.0

    def vertex_vector(self, Wf: np.ndarray) -> np.ndarray:
        """Face vectors -> vertex frames by area-weighted averaging."""
        amb = np.einsum("fi,fik->fk", Wf, self.frames.face_basis)
        vamb = self.face_to_vertex_average @ amb
        # project onto each vertex tangent plane
        return np.einsum("vik,vk->vi", self.frames.vertex_basis, vamb)

    def vertex_scalar(self, wf: np.ndarray) -> np.ndarray:
        return self.face_to_vertex_average @ np.asarray(wf)

    def to_ambient(self, W: np.ndarray) -> np.ndarray:
        """Tangent vertex field -> ambient 3-vectors."""
        return np.einsum("vi,vik->vk", W, self.frames.vertex_basis)

    def from_ambient(self, X: np.ndarray) -> np.ndarray:
        """Ambient vectors at vertices -> tangential frame components."""
        return np.einsum("vik,vk->vi", self.frames.vertex_basis, X)

    def face_tensor_ambient(self, T: np.ndarray) -> np.ndarray:
        F = self.frames.face_basis
        return np.einsum("fia,fij,fjb->fab", F, T, F)

    def face_tensor_along(self, T: np.ndarray, a, b) -> np.ndarray:
        """Evaluate ``T(P a, P b)`` per face for ambient directions a, b."""
        F = self.frames.face_basis
        pa = np.einsum("fik,...k->fi", F, np.asarray(a, dtype=float)) if np.ndim(a) == 1 \
            else np.einsum("fik,fk->fi", F, a)
        pb = np.einsum("fik,...k->fi", F, np.asarray(b, dtype=float)) if np.ndim(b) == 1 \
            else np.einsum("fik,fk->fi", F, b)
        return np.einsum("fi,fij,fj->f", pa, T, pb)

    # --- quadrature -----------------------------------------------------------------

    def integrate(self, field: np.ndarray) -> float:
        """One-point quadrature; vertex scalars are averaged to faces first."""
        field = np.asarray(field, dtype=float)
        if field.shape == (self.mesh.n_vertices,) and self.mesh.n_vertices != self.mesh.n_faces:
            field = self.face_scalar(field)
        if field.shape != (self.mesh.n_faces,):
            raise ValueError(f"cannot integrate field of shape {field.shape}")
        return float(self.mesh.face_areas @ field)

    def scalar_mass(self, weight: np.ndarray | None = None) -> sp.csr_matrix:
        """Consistent P1 mass ``int a phi_i phi_j`` with a P1 weight ``a``."""
        m = self.mesh
        t = m.triangles
        A = m.face_areas
        if weight is None:
            local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
            vals = A[:, None, None] * local[None]
        else:
            a = np.asarray(weight, dtype=float)[t]  # (nf, 3)
            # int l_i l_j l_k = 2A i!j!k!/(i+j+k+2)!
            vals = 2.0 * A[:, None, None] * np.einsum("fk,ijk->fij", a, _TRIPLE)
        rows = np.repeat(t, 3, axis=1).ravel()
        cols = np.tile(t, (1, 3)).ravel()
        return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(m.n_vertices, m.n_vertices))

    def vector_mass(self, weight: np.ndarray | None = None) -> sp.csr_matrix:
        """Consistent mass for tangent fields: ``int a <W, U>`` with ambient dot
        products between neighbouring vertex frames. DOF order is (v, k)."""
        S = self.scalar_mass(weight).tocoo()
        E = self.frames.vertex_basis
        G = np.einsum("nik,njk->nij", E[S.row], E[S.col])  # (nnz, 2, 2)
        rows = (2 * S.row[:, None, None] + np.arange(2)[None, :, None]).repeat(2, axis=2)
        cols = (2 * S.col[:, None, None] + np.arange(2)[None, None, :]).repeat(2, axis=1)
        nv = self.mesh.n_vertices
        return sp.csr_matrix(((S.data[:, None, None] * G).ravel(), (rows.ravel(), cols.ravel())),
                             shape=(2 * nv, 2 * nv))

    def l2_inner(self, F1: np.ndarray, F2: np.ndarray) -> float:
        """L2 inner product; vertex fields are integrated exactly as P1."""
        F1 = np.asarray(F1, dtype=float)
        F2 = np.asarray(F2, dtype=float)
        if F1.shape != F2.shape:
            raise ValueError("fields live on different layouts")
        nv, nf = self.mesh.n_vertices, self.mesh.n_faces
        if F1.shape == (nv,):
            return float(F1 @ (self.scalar_mass() @ F2))
        if F1.shape == (nv, 2):
            return float(F1.ravel() @ (self.vector_mass() @ F2.ravel()))
        if F1.shape[0] == nf:
            prod = (F1 * F2).reshape(nf, -1).sum(axis=1)
            return float(self.mesh.face_areas @ prod)
        raise ValueError(f"unsupported field shape {F1.shape}")


def _triple_table():
    # int l_i l_j l_k dA = 2A * a!b!c!/(a+b+c+2)! with (a, b, c) the multiplicities
    out = np.empty((3, 3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                mult = np.bincount([i, j, k], minlength=3)
                out[i, j, k] = np.prod([factorial(q) for q in mult]) / factorial(5)
    return out


_TRIPLE = _triple_table()


# ---------------------------------------------------------------------------------
# fundamental forms and tensor algebra

def fundamental_forms(surface: Surface) -> FundamentalForms:
    """Second form from the gradient of the P1 vertex-normal field; c = Pi Pi."""
    m = surface.mesh
    N = surface.frames.vertex_normals[m.triangles]  # (nf, 3, 3)
    # dN[f, k, j]: derivative of ambient component k along f_j
    dN = np.einsum("fak,faj->fkj", N, surface.basis_gradients)
    Pi = sym(np.einsum("fik,fkj->fij", surface.frames.face_basis, dN))
    c = Pi @ Pi
    eps = np.broadcast_to(EPS, Pi.shape).copy()
    return FundamentalForms(Pi=Pi, c=c, eps=eps)


def _check_pair(A, B):
    if np.shape(A) != np.shape(B):
        raise ValueError(f"frame/layout mismatch: {np.shape(A)} vs {np.shape(B)}")


def sym(T: np.ndarray) -> np.ndarray:
    return 0.5 * (T + np.swapaxes(T, -1, -2))


def transpose(T: np.ndarray) -> np.ndarray:
    return np.swapaxes(T, -1, -2)


def trace(T: np.ndarray) -> np.ndarray:
    return np.trace(T, axis1=-2, axis2=-1)


def inner(T1: np.ndarray, T2: np.ndarray) -> np.ndarray:
    _check_pair(T1, T2)
    return np.einsum("...ij,...ij->...", T1, T2)


def interior_product(W: np.ndarray, T: np.ndarray) -> np.ndarray:
    """``(i(W) T)(X) = T(W, X)``; W given per face."""
    if np.shape(W)[:-1] != np.shape(T)[:-2]:
        raise ValueError("frame/layout mismatch")
    return np.einsum("fi,fij->fj", W, T)


def interior_product3(W: np.ndarray, DT: np.ndarray) -> np.ndarray:
    """``(i(W) DT)(X, Y) = DT(W, X, Y)``."""
    if np.shape(W)[:-1] != np.shape(DT)[:-3]:
        raise ValueError("frame/layout mismatch")
    return np.einsum("fk,fkij->fij", W, DT)


def G_map(DV: np.ndarray, T: np.ndarray) -> np.ndarray:
    """``G(V, T) = 1/2 [T(., nabla_. V) + T*(., nabla_. V)] = sym(T) DV``.

    Takes the covariant differential ``DV`` of the vector field.
    """
    _check_pair(DV, T)
    return sym(T) @ DV


def tensor_derivative(surface: Surface, T: np.ndarray) -> np.ndarray:
    """Least-squares covariant derivative of a piecewise-constant face tensor.

    Neighbour values (faces sharing a vertex) are carried into the face
    frame by the smallest rotation between face normals before fitting.
    """
    m = surface.mesh
    F = surface.frames.face_basis
    n = surface.frames.face_normals
    adj = m.face_adjacency.tocoo()
    f, g = adj.row, adj.col
    R = _rotation_between(n[g], n[f])  # (k, 3, 3)
    Q = np.einsum("kia,kab,kjb->kij", F[f], R, F[g])
    Tg = np.einsum("kia,kab,kjb->kij", Q, T[g], Q)
    dT = Tg - T[f]
    d = np.einsum("kia,ka->ki", F[f], m.face_centroids[g] - m.face_centroids[f])
    nf = m.n_faces
    DD = np.zeros((nf, 2, 2))
    np.add.at(DD, f, np.einsum("ki,kj->kij", d, d))
    DR = np.zeros((nf, 2, 2, 2))
    np.add.at(DR, f, np.einsum("kab,kj->kabj", dT, d))
    out = np.zeros((nf, 2, 2, 2))
    det = np.linalg.det(DD)
    scale = np.einsum("fii->f", DD)
    ok = det > 1e-10 * np.maximum(scale, 1e-300) ** 2
    if (~ok).any():
        log.warning("tensor_derivative: %d faces without a usable neighbourhood; DT set to 0",
                    int((~ok).sum()))
    inv = np.zeros_like(DD)
    inv[ok] = np.linalg.inv(DD[ok])
    out[ok] = np.einsum("fabj,fjl->fabl", DR[ok], inv[ok])
    return out


# ---------------------------------------------------------------------------------
# geodesic neighbourhoods

@dataclass(frozen=True)
class VertexFaceSet:
    vertices: np.ndarray  # sorted vertex indices
    faces: np.ndarray  # sorted face indices

    def area(self, mesh: SurfaceMesh) -> float:
        return float(mesh.face_areas[self.faces].sum())


def distance_field(mesh: SurfaceMesh, sources, cutoff=np.inf) -> np.ndarray:
    """Dijkstra distance on the edge graph from a vertex set."""
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    if sources.size == 0:
        return np.full(mesh.n_vertices, np.inf)
    dist, _, _ = kernels.dijkstra(mesh.edge_graph, sources, cutoff)
    return dist


def geodesic_ball(mesh: SurfaceMesh, center: int, radius: float, dist=None) -> VertexFaceSet:
    """Vertices with graph distance < radius; faces whose vertices all qualify.

    ``dist`` substitutes a precomputed distance field from ``center``. A
    radius below the local edge length returns the center alone.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    d = distance_field(mesh, [center], cutoff=radius) if dist is None else np.asarray(dist)
    inside = d < radius
    inside[center] = True
    faces = np.flatnonzero(inside[mesh.triangles].all(axis=1))
    return VertexFaceSet(np.flatnonzero(inside), faces)


def eps_neighborhood(mesh: SurfaceMesh, vertices, eps: float) -> VertexFaceSet:
    """Vertices within graph distance < eps of the set, and every face touching one."""
    vertices = np.asarray(vertices, dtype=np.int64)
    if vertices.size == 0:
        return VertexFaceSet(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    d = distance_field(mesh, vertices, cutoff=eps)
    inside = d < eps
    inside[vertices] = True
    faces = np.flatnonzero(inside[mesh.triangles].any(axis=1))
    return VertexFaceSet(np.flatnonzero(inside), faces)


def _expmap_walk(surface: Surface, sources, cutoff=np.inf):
    """Walk the Dijkstra forest from ``sources`` accumulating edge vectors in
    each root's tangent plane; frames are carried along by the smallest
    rotation between vertex normals. Returns ``(U, Rot, origin)``."""
    mesh = surface.mesh
    E = surface.frames.vertex_basis
    N = surface.frames.vertex_normals
    X = mesh.vertices
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    d, pred, origin = kernels.dijkstra(mesh.edge_graph, sources, cutoff)
    order = np.argsort(d, kind="stable")
    order = order[np.isfinite(d[order])]
    nv = mesh.n_vertices
    U = np.full((nv, 2), np.nan)
    Rot = np.zeros((nv, 2, 2))
    U[sources] = 0.0
    Rot[sources] = np.eye(2)
    kids = order[pred[order] >= 0]
    if kids.size == 0:
        return U, Rot, origin
    par = pred[kids]
    R3 = _rotation_between(N[kids], N[par])
    T = np.einsum("kia,kab,kjb->kij", E[par], R3, E[kids])  # child comps -> parent comps
    chord = X[kids] - X[par]
    et = np.einsum("kia,ka->ki", E[par], chord)
    et *= (np.linalg.norm(chord, axis=1) / np.maximum(np.linalg.norm(et, axis=1), 1e-300))[:, None]
    # tree depth, then one vectorized update per level
    depth = np.zeros(nv, dtype=np.int64)
    for x, p in zip(kids.tolist(), par.tolist()):
        depth[x] = depth[p] + 1
    lev = depth[kids]
    for k in range(1, int(lev.max()) + 1):
        sel = lev == k
        x, p = kids[sel], par[sel]
        U[x] = U[p] + np.einsum("kij,kj->ki", Rot[p], et[sel])
        Rot[x] = Rot[p] @ T[sel]
    return U, Rot, origin


def log_map(surface: Surface, center: int, cutoff=np.inf):
    """Discrete exponential-map coordinates around ``center``.

    Returns ``(V, dist)`` where ``V`` is the position field in vertex-frame
    components (``V = x - center`` on a plane) and ``dist = |V|``; vertices
    beyond ``cutoff`` get NaN and inf.
    """
    U, Rot, _ = _expmap_walk(surface, [center], cutoff)
    V = np.einsum("vji,vj->vi", Rot, U)
    dist = np.linalg.norm(U, axis=1)
    return V, np.where(np.isnan(dist), np.inf, dist)


def exp_distance(surface: Surface, sources, cutoff=np.inf) -> np.ndarray:
    """Distance to a vertex set via exponential-map coordinates of the
    nearest (graph) source; exact on planar meshes."""
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    if sources.size == 0:
        return np.full(surface.mesh.n_vertices, np.inf)
    U, _, _ = _expmap_walk(surface, sources, cutoff)
    dist = np.linalg.norm(U, axis=1)
    return np.where(np.isnan(dist), np.inf, dist)
