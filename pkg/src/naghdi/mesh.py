"""Triangulated surfaces: validation, OFF I/O and the built-in generators."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class MeshError(ValueError):
    """Raised for meshes that violate the surface invariants."""


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Embedded oriented triangle mesh with boundary bookkeeping.

    ``boundary_vertices`` and ``boundary_loops`` are derived from the
    triangles and never passed in.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    name: str = field(default="mesh")

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError("vertices must have shape (n, 3)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("triangles must have shape (m, 3)")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        self._validate()

    def _validate(self):
        a = self.face_areas
        if len(a) == 0:
            raise MeshError("mesh has no triangles")
        e = self.edges
        mean_len = np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean()
        bad = np.flatnonzero(a <= 1e-14 * mean_len**2)
        if bad.size:
            raise MeshError(f"degenerate triangle at face {int(bad[0])}")
        counts = self.edge_face_count
        if counts.max() > 2:
            raise MeshError("non-manifold edge shared by more than two triangles")
        # consistent orientation: each interior edge traversed once per direction
        he = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                             self.triangles[:, [2, 0]]])
        _, c = np.unique(he, axis=0, return_counts=True)
        if c.max() > 1:
            raise MeshError("mesh is not consistently oriented")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.triangles)

    @cached_property
    def face_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    @cached_property
    def face_centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def _edge_data(self):
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e = np.sort(e, axis=1)
        uniq, inv, counts = np.unique(e, axis=0, return_inverse=True, return_counts=True)
        return uniq, inv.reshape(-1), counts

    @property
    def edges(self) -> np.ndarray:
        return self._edge_data[0]

    @property
    def edge_face_count(self) -> np.ndarray:
        return self._edge_data[2]

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return self.edges[self.edge_face_count == 1]

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.n_vertices, dtype=bool)
        m[self.boundary_vertices] = True
        return m

    @cached_property
    def boundary_loops(self) -> list[np.ndarray]:
        """Boundary cycles, each oriented along the triangle orientation."""
        t = self.triangles
        he = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        key = np.sort(he, axis=1)
        bset = {tuple(e) for e in self.boundary_edges}
        nxt = {}
        for (a, b), k in zip(he, key):
            if tuple(k) in bset:
                nxt[int(a)] = int(b)
        loops, seen = [], set()
        for start in sorted(nxt):
            if start in seen:
                continue
            loop, cur = [], start
            while cur not in seen:
                seen.add(cur)
                loop.append(cur)
                cur = nxt[cur]
            loops.append(np.array(loop, dtype=np.int64))
        return loops

    @cached_property
    def face_adjacency(self) -> sp.csr_matrix:
        """Faces sharing at least one vertex (excluding the face itself)."""
        nf = self.n_faces
        rows = np.repeat(np.arange(nf), 3)
        inc = sp.csr_matrix((np.ones(3 * nf), (rows, self.triangles.ravel())),
                            shape=(nf, self.n_vertices))
        adj = (inc @ inc.T).tocsr()
        adj.setdiag(0)
        adj.eliminate_zeros()
        return adj

    @cached_property
    def vertex_face_incidence(self) -> sp.csr_matrix:
        """(n_vertices, n_faces) 0/1 incidence."""
        nf = self.n_faces
        cols = np.repeat(np.arange(nf), 3)
        return sp.csr_matrix((np.ones(3 * nf), (self.triangles.ravel(), cols)),
                             shape=(self.n_vertices, nf))

    @cached_property
    def edge_graph(self) -> sp.csr_matrix:
        """Symmetric vertex graph weighted by Euclidean edge length."""
        e = self.edges
        w = np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)
        n = self.n_vertices
        g = sp.csr_matrix((np.concatenate([w, w]),
                           (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
                          shape=(n, n))
        g.sort_indices()
        return g

    @property
    def mean_edge_length(self) -> float:
        return float(self.edge_graph.data.mean())

    @property
    def total_area(self) -> float:
        return float(self.face_areas.sum())

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.triangles.tobytes())
        return h.hexdigest()[:16]


# ----------------------------------------------------------------------------
# OFF I/O

def write_off(mesh: SurfaceMesh, path) -> None:
    lines = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} 0"]
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def read_off(path) -> SurfaceMesh:
    tokens = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise MeshError(f"{path}: missing OFF header")
    nv, nf = int(tokens[1]), int(tokens[2])
    pos = 4
    verts = np.array(tokens[pos:pos + 3 * nv], dtype=float).reshape(nv, 3)
    pos += 3 * nv
    tris = []
    for _ in range(nf):
        k = int(tokens[pos])
        idx = [int(x) for x in tokens[pos + 1:pos + 1 + k]]
        pos += 1 + k
        if k < 3:
            raise MeshError("face with fewer than three vertices")
        # fan-triangulate polygons
        tris += [(idx[0], idx[i], idx[i + 1]) for i in range(1, k - 1)]
    return SurfaceMesh(verts, np.array(tris, dtype=np.int64), name=Path(path).stem)


# ----------------------------------------------------------------------------
# generators

def _grid_triangles(nu, nv, periodic_u=False):
    """Triangles of an (nu+1) x (nv+1) grid with alternating diagonals."""
    cols = nu if periodic_u else nu + 1
    tris = []
    for j in range(nv):
        for i in range(nu):
            i1 = (i + 1) % cols
            a, b = j * cols + i, j * cols + i1
            c, d = (j + 1) * cols + i1, (j + 1) * cols + i
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    return np.array(tris, dtype=np.int64)


def plate(n: int, length: float = 1.0) -> SurfaceMesh:
    """Square plate [0, L]^2 in the z = 0 plane, n x n cells."""
    if n < 1:
        raise ValueError("resolution must be positive")
    s = np.linspace(0.0, length, n + 1)
    x, y = np.meshgrid(s, s)
    v = np.column_stack([x.ravel(), y.ravel(), np.zeros(x.size)])
    return SurfaceMesh(v, _grid_triangles(n, n), name=f"plate{n}")


def annulus(n: int, r_in: float = 0.5, r_out: float = 1.0) -> SurfaceMesh:
    """Flat annulus; n radial cells, roughly square cells around."""
    nt = max(8, int(round(2 * np.pi * 0.5 * (r_in + r_out) / ((r_out - r_in) / n))))
    r = np.linspace(r_in, r_out, n + 1)
    th = np.linspace(0.0, 2 * np.pi, nt, endpoint=False)
    R, T = np.meshgrid(th, r)
    v = np.column_stack([T.ravel() * np.cos(R.ravel()), T.ravel() * np.sin(R.ravel()),
                         np.zeros(R.size)])
    # (theta, r) is left-handed w.r.t. +z; flip to keep the normal up
    tris = _grid_triangles(nt, n, periodic_u=True)[:, ::-1]
    return SurfaceMesh(v, tris, name=f"annulus{n}")


def cylinder_patch(n: int, radius: float = 1.0, half_height: float = 1.0,
                   slit_angle: float = 0.0) -> SurfaceMesh:
    """Unit cylinder x^2 + y^2 = r^2, |z| <= H, cut open along one generator.

    The generator at ``slit_angle`` is duplicated, so the patch is a disk
    (the cylinder minus that line). ``n`` counts cells along the height;
    the circumference gets about pi times as many so cells stay square.
    """
    nt = max(8, int(round(np.pi * radius * n / half_height)))
    th = slit_angle + np.linspace(0.0, 2 * np.pi, nt + 1)
    z = np.linspace(-half_height, half_height, n + 1)
    T, Z = np.meshgrid(th, z)
    v = np.column_stack([radius * np.cos(T.ravel()), radius * np.sin(T.ravel()), Z.ravel()])
    # (theta, z) is right-handed with the outward normal
    return SurfaceMesh(v, _grid_triangles(nt, n), name=f"cylinder{n}")


def spherical_cap(n: int, radius: float = 1.0, half_angle: float = np.pi / 3) -> SurfaceMesh:
    """Cap of the sphere of radius R around the north pole, n rings."""
    verts = [np.array([0.0, 0.0, radius])]
    rings = []
    for k in range(1, n + 1):
        phi = half_angle * k / n
        m = 6 * k
        th = np.linspace(0.0, 2 * np.pi, m, endpoint=False)
        ring = np.column_stack([radius * np.sin(phi) * np.cos(th),
                                radius * np.sin(phi) * np.sin(th),
                                np.full(m, radius * np.cos(phi))])
        rings.append(np.arange(len(verts), len(verts) + m))
        verts.extend(ring)
    verts = np.array(verts)
    tris = []
    for i in range(6):
        tris.append((0, 1 + i, 1 + (i + 1) % 6))
    for k in range(1, n):
        inner, outer = rings[k - 1], rings[k]
        mi, mo = len(inner), len(outer)
        # walk both rings by angle
        i = j = 0
        while i < mi or j < mo:
            ai = (i + 0.5) / mi if i < mi else np.inf
            aj = (j + 0.5) / mo if j < mo else np.inf
            if aj <= ai:
                tris.append((inner[i % mi], outer[j % mo], outer[(j + 1) % mo]))
                j += 1
            else:
                tris.append((inner[i % mi], outer[(j) % mo], inner[(i + 1) % mi]))
                i += 1
    return SurfaceMesh(verts, np.array(tris, dtype=np.int64), name=f"cap{n}")


def icosphere(subdivisions: int, radius: float = 1.0) -> SurfaceMesh:
    """Closed sphere mesh by midpoint subdivision of an icosahedron."""
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in v]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return SurfaceMesh(radius * np.array(verts), np.array(f, dtype=np.int64),
                       name=f"sphere{subdivisions}")


GENERATORS = {
    "plate": plate,
    "annulus": annulus,
    "cylinder": cylinder_patch,
    "cap": spherical_cap,
}
