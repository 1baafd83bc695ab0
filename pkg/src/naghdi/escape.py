"""Escape vector fields and regions, and the damping profile they support."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import (EPS, Surface, VertexFaceSet, distance_field, eps_neighborhood,
                       exp_distance, geodesic_ball, log_map)

log = logging.getLogger(__name__)

BASELINE_H = 0.1


class NotEscapeCandidate(ValueError):
    """DV is not of the form v g + l eps to tolerance."""


class RegionError(ValueError):
    pass


@dataclass(frozen=True)
class DVDecomposition:
    v: np.ndarray  # (nf,)
    l: np.ndarray  # (nf,)
    face_residual: np.ndarray  # (nf,) max entry of DV - v g - l eps

    @property
    def residual(self) -> float:
        return float(self.face_residual.max()) if self.face_residual.size else 0.0


def decompose_DV(DV: np.ndarray) -> DVDecomposition:
    """Split per-face differentials into v g + l eps + remainder."""
    v = 0.5 * np.trace(DV, axis1=1, axis2=2)
    l = 0.5 * np.einsum("fij,ij->f", DV, EPS)
    rest = DV - v[:, None, None] * np.eye(2) - l[:, None, None] * EPS
    return DVDecomposition(v, l, np.abs(rest).reshape(len(DV), -1).max(axis=1))


def residual_tolerance(v: np.ndarray, h: float) -> float:
    """0.1 min(1, mean|v|) at the baseline spacing, shrinking linearly with h.

    A roundoff floor keeps exactly conformal fields with v = 0 admissible.
    """
    vm = float(np.mean(np.abs(v)))
    return max(0.1 * min(1.0, vm) * min(1.0, h / BASELINE_H), 1e-10 * max(vm, 1.0))


@dataclass(frozen=True)
class EscapeField:
    V: np.ndarray  # tangent vertex field
    faces: np.ndarray  # faces the field is certified on
    v: np.ndarray
    l: np.ndarray
    residual: float
    certificate: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.certificate.get("pass", False))


def check_escape(surface: Surface, V: np.ndarray, lambda0: float, beta: float,
                 faces=None, tol=None) -> dict:
    """Certificate for a candidate escape field on a face set.

    Two margins are computed, with max|l| and with max|l|/2; the stricter
    one decides. Raises NotEscapeCandidate if DV is not conformal to tolerance.
    """
    faces = np.arange(surface.mesh.n_faces) if faces is None else np.asarray(faces)
    if faces.size == 0:
        raise NotEscapeCandidate("empty face set")
    d = decompose_DV(surface.differential(V)[faces])
    if tol is None:
        tol = residual_tolerance(d.v, surface.mesh.mean_edge_length)
    worst = int(np.argmax(d.face_residual))
    if d.residual > tol:
        raise NotEscapeCandidate(
            f"not an escape candidate: residual {d.residual:.3e} > {tol:.3e} "
            f"at face {int(faces[worst])}")
    v_min = float(d.v.min())
    l_max = float(np.abs(d.l).max())
    k = lambda0 * (1.0 + 2.0 * beta)
    m_full = 2.0 * v_min - k * l_max
    m_half = 2.0 * v_min - k * 0.5 * l_max
    if (m_full > 0) != (m_half > 0):
        log.info("escape margins disagree: full %.4g, half %.4g", m_full, m_half)
    margin = min(m_full, m_half)
    return {"v_min": v_min, "l_max": l_max, "lambda0": float(lambda0), "beta": float(beta),
            "margin": margin, "margin_half_l": m_half, "residual": d.residual,
            "tolerance": float(tol), "worst_face": int(faces[worst]), "pass": bool(margin > 0)}


def certify_field(surface, V, lambda0, beta, faces=None, tol=None) -> EscapeField:
    faces = np.arange(surface.mesh.n_faces) if faces is None else np.asarray(faces)
    cert = check_escape(surface, V, lambda0, beta, faces, tol)
    d = decompose_DV(surface.differential(V)[faces])
    return EscapeField(V, faces, d.v, d.l, d.residual, cert)


def certificate_json(cert: dict) -> str:
    keys = ("v_min", "l_max", "lambda0", "beta", "margin", "residual", "pass")
    return json.dumps({k: cert[k] for k in keys}, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# candidate fields

def radial_field(surface: Surface, x0) -> np.ndarray:
    """Tangential part of x - x0; the classical field on a planar piece."""
    X = surface.mesh.vertices - np.asarray(x0, dtype=float)
    return surface.from_ambient(X)


def rotation_field(surface: Surface, x0=(0.0, 0.0, 0.0)) -> np.ndarray:
    X = surface.mesh.vertices - np.asarray(x0, dtype=float)
    return surface.from_ambient(np.column_stack([-X[:, 1], X[:, 0], np.zeros(len(X))]))


def shear_field(surface: Surface, x0=(0.0, 0.0, 0.0)) -> np.ndarray:
    X = surface.mesh.vertices - np.asarray(x0, dtype=float)
    return surface.from_ambient(np.column_stack([X[:, 0], -X[:, 1], np.zeros(len(X))]))


def geodesic_radial_field(surface: Surface, center: int, cutoff=np.inf) -> np.ndarray:
    """Gradient of half the squared geodesic distance from ``center``
    (exponential-map coordinates); NaN beyond ``cutoff``."""
    V, _ = log_map(surface, center, cutoff)
    return V


# ---------------------------------------------------------------------------
# regions

@dataclass(frozen=True)
class Subregion:
    center: int
    radius: float
    cells: VertexFaceSet
    field: EscapeField
    outflow_vertices: np.ndarray  # vertices on Gamma_i0


@dataclass(frozen=True)
class EscapeRegion:
    subregions: list
    eps: float
    G: VertexFaceSet
    measure: float
    total_area: float

    @property
    def fraction(self) -> float:
        return self.measure / self.total_area

    def summary(self) -> dict:
        return {"n_subregions": len(self.subregions), "eps": self.eps,
                "measure": self.measure, "fraction": self.fraction,
                "certificates": [s.field.certificate for s in self.subregions]}


def _outflow_vertices(surface: Surface, faces: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Endpoints of boundary edges of a face set where <V, nu> > 0."""
    mesh = surface.mesh
    t = mesh.triangles[faces]
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    opp = np.concatenate([t[:, 2], t[:, 0], t[:, 1]])
    key = np.sort(edges, axis=1)
    _, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    bd = cnt[inv.ravel()] == 1
    e, o = edges[bd], opp[bd]
    X = mesh.vertices
    tang = X[e[:, 1]] - X[e[:, 0]]
    mid = 0.5 * (X[e[:, 0]] + X[e[:, 1]])
    inward = X[o] - mid
    nu = -(inward - tang * (np.einsum("ij,ij->i", inward, tang)
                           / np.einsum("ij,ij->i", tang, tang))[:, None])
    Va = surface.to_ambient(np.nan_to_num(V))
    flux = np.einsum("ij,ij->i", 0.5 * (Va[e[:, 0]] + Va[e[:, 1]]), nu)
    return np.unique(e[flux > 0].ravel())


def _complement_region(surface, covered_faces, outflow, eps):
    mesh = surface.mesh
    comp = np.setdiff1d(np.arange(mesh.n_faces), covered_faces)
    seed = np.union1d(np.unique(mesh.triangles[comp].ravel()), outflow).astype(np.int64)
    nb = eps_neighborhood(mesh, seed, eps)
    faces = np.union1d(nb.faces, comp)
    verts = np.union1d(nb.vertices, np.unique(mesh.triangles[faces].ravel())) \
        if faces.size else nb.vertices
    return VertexFaceSet(verts, faces)


def build_escape_region(surface: Surface, balls, eps: float, lambda0: float, beta: float,
                        shrink: float = 0.9, max_shrink: int = 20,
                        require_pass: bool = True) -> EscapeRegion:
    """Geodesic balls carrying exponential-map fields, plus the eps-collar G.

    Ball membership uses the exponential-map distance from each center, the
    same construction that produces the field.

    Later balls that overlap earlier ones are shrunk by ``shrink`` until
    disjoint; if that fails a RegionError names the pair.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    mesh = surface.mesh
    owner = np.full(mesh.n_faces, -1)
    subs = []
    for i, (center, radius) in enumerate(balls):
        V, dist = log_map(surface, int(center))
        r = float(radius)
        for _ in range(max_shrink + 1):
            cells = geodesic_ball(mesh, int(center), r, dist=dist)
            clash = owner[cells.faces]
            if (clash < 0).all():
                break
            r *= shrink
        else:
            j = int(clash[clash >= 0][0])
            raise RegionError(f"ball {i} (center {center}) overlaps ball {j} "
                              f"even after shrinking to r = {r:.4g}")
        if r < radius:
            log.info("ball %d shrunk from %.4g to %.4g", i, radius, r)
        if cells.faces.size == 0:
            raise RegionError(f"ball {i} at vertex {center} contains no faces (r = {r:.4g})")
        owner[cells.faces] = i
        fld = certify_field(surface, V, lambda0, beta, cells.faces)
        if require_pass and not fld.passed:
            raise RegionError(f"ball {i} field fails certification: {fld.certificate}")
        out = _outflow_vertices(surface, cells.faces, V)
        subs.append(Subregion(int(center), r, cells, fld, out))
    covered = np.flatnonzero(owner >= 0)
    outflow = np.concatenate([s.outflow_vertices for s in subs]) if subs \
        else np.empty(0, dtype=np.int64)
    G = _complement_region(surface, covered, outflow, eps)
    return EscapeRegion(subs, float(eps), G, G.area(mesh), mesh.total_area)


def field_region(surface: Surface, V: np.ndarray, eps: float, lambda0: float,
                 beta: float) -> EscapeRegion:
    """One field on the whole surface; G collects the eps-collar of the
    outflow boundary."""
    mesh = surface.mesh
    faces = np.arange(mesh.n_faces)
    fld = certify_field(surface, V, lambda0, beta, faces)
    if not fld.passed:
        raise RegionError(f"field fails certification: {fld.certificate}")
    out = _outflow_vertices(surface, faces, V)
    cells = VertexFaceSet(np.arange(mesh.n_vertices), faces)
    sub = Subregion(-1, np.inf, cells, fld, out)
    G = _complement_region(surface, faces, out, eps)
    return EscapeRegion([sub], float(eps), G, G.area(mesh), mesh.total_area)


def greedy_balls(surface: Surface, n_balls: int, min_radius: float = 0.0):
    """Largest-inscribed-ball packing: each new ball sits at the vertex
    farthest from the boundary and from the balls placed so far."""
    mesh = surface.mesh
    balls = []
    blocked = mesh.boundary_vertices.astype(np.int64)
    for _ in range(n_balls):
        d = exp_distance(surface, blocked)
        c = int(np.argmax(d))
        r = float(d[c])
        if not np.isfinite(r) or r <= min_radius:
            break
        _, dist = log_map(surface, c, cutoff=2.0 * r)
        ball = geodesic_ball(mesh, c, r, dist=dist)
        if ball.faces.size == 0:
            break
        balls.append((c, r))
        blocked = np.union1d(blocked, ball.vertices)
    return balls


def damping_from_region(surface: Surface, region, a0: float, taper: float = 0.0) -> np.ndarray:
    """a = a0 on the vertices of G, smoothstep down to 0 over ``taper``."""
    if a0 <= 0:
        raise ValueError("a0 must be positive")
    mesh = surface.mesh
    if isinstance(region, EscapeRegion):
        faces = region.G.faces
    elif isinstance(region, VertexFaceSet):
        faces = region.faces
    else:
        faces = np.asarray(region, dtype=np.int64)
    a = np.zeros(mesh.n_vertices)
    if faces.size == 0:
        return a
    verts = np.unique(mesh.triangles[faces].ravel())
    a[verts] = a0
    if taper > 0:
        d = distance_field(mesh, verts, cutoff=taper)
        s = np.clip(1.0 - d / taper, 0.0, 1.0)
        a = np.maximum(a, a0 * s * s * (3.0 - 2.0 * s))
    return a
