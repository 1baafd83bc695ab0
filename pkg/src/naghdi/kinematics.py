"""Linearized Naghdi strain maps for a shell state xi = (W1, W2, w1, w2).

Each strain is available twice: as a direct per-face formula (the
``strain_*`` functions) and as a sparse operator from the flat DOF vector
(``strain_operators``). Assembly uses the operators; the formulas are the
independent route the tests compare against.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .geometry import Surface, interior_product, interior_product3, sym

DOFS_PER_VERTEX = 6  # W1 (2), W2 (2), w1, w2


@dataclass(frozen=True, eq=False)
class ShellState:
    """Vertex values of the four unknowns; tangent fields in vertex frames."""

    W1: np.ndarray
    W2: np.ndarray
    w1: np.ndarray
    w2: np.ndarray

    @classmethod
    def zeros(cls, nv: int) -> "ShellState":
        return cls(np.zeros((nv, 2)), np.zeros((nv, 2)), np.zeros(nv), np.zeros(nv))

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "ShellState":
        x = np.asarray(x, dtype=float).reshape(-1, DOFS_PER_VERTEX)
        return cls(x[:, 0:2].copy(), x[:, 2:4].copy(), x[:, 4].copy(), x[:, 5].copy())

    def to_vector(self) -> np.ndarray:
        return np.column_stack([self.W1, self.W2, self.w1, self.w2]).ravel()

    @property
    def n_vertices(self) -> int:
        return len(self.w1)

    def __add__(self, other):
        return ShellState.from_vector(self.to_vector() + other.to_vector())

    def __mul__(self, s):
        return ShellState.from_vector(s * self.to_vector())

    __rmul__ = __mul__

    def is_clamped(self, mesh, tol=0.0) -> bool:
        b = mesh.boundary_vertices
        x = self.to_vector().reshape(-1, DOFS_PER_VERTEX)[b]
        return bool(np.all(np.abs(x) <= tol))


@dataclass(frozen=True, eq=False)
class StrainSet:
    Upsilon: np.ndarray  # (nf, 2, 2)
    chi0: np.ndarray  # (nf, 2, 2)
    phi0: np.ndarray  # (nf, 2)


# ---------------------------------------------------------------------------
# direct formulas

def strain_Upsilon(surface: Surface, xi: ShellState) -> np.ndarray:
    """Change of metric: sym(DW1) + w1 Pi."""
    Pi = surface.forms.Pi
    return sym(surface.differential(xi.W1)) + surface.face_scalar(xi.w1)[:, None, None] * Pi


def K_ol(surface: Surface, xi: ShellState) -> np.ndarray:
    """Lower-order part of the curvature change: -i(W1)DPi + w1 c + w2 Pi."""
    f = surface.forms
    W1 = surface.face_vector(xi.W1)
    iDPi = sym(interior_product3(W1, surface.Pi_derivative))
    return (-iDPi + surface.face_scalar(xi.w1)[:, None, None] * f.c
            + surface.face_scalar(xi.w2)[:, None, None] * f.Pi)


def strain_chi0(surface: Surface, xi: ShellState) -> np.ndarray:
    """Change of curvature in the W2 variables: sym(DW2) + K_ol."""
    return sym(surface.differential(xi.W2)) + K_ol(surface, xi)


def strain_phi0(surface: Surface, xi: ShellState) -> np.ndarray:
    """Rotation 1-form: Dw1/2 - i(W1)Pi + W2/2."""
    W1 = surface.face_vector(xi.W1)
    return (0.5 * surface.gradient(xi.w1) - interior_product(W1, surface.forms.Pi)
            + 0.5 * surface.face_vector(xi.W2))


def strains(surface: Surface, xi: ShellState) -> StrainSet:
    return StrainSet(strain_Upsilon(surface, xi), strain_chi0(surface, xi),
                     strain_phi0(surface, xi))


def chi0_from_V(surface: Surface, W1: np.ndarray, V: np.ndarray, w1: np.ndarray,
                w2: np.ndarray) -> np.ndarray:
    """Curvature change written in the rotation variable V = W2 - i(W1)Pi:
    sym(DV + Pi(., DW1)) + w2 Pi + w1 c."""
    f = surface.forms
    DW1 = surface.differential(W1)
    return (sym(surface.differential(V) + f.Pi @ DW1)
            + surface.face_scalar(w2)[:, None, None] * f.Pi
            + surface.face_scalar(w1)[:, None, None] * f.c)


def rotation_variable(surface: Surface, xi: ShellState) -> np.ndarray:
    """V = W2 - i(W1)Pi at vertices, with Pi averaged from faces."""
    f = surface.forms
    # ambient Pi averaged to vertices, then read in the vertex frames
    PiA = surface.face_tensor_ambient(f.Pi)
    PiV = (surface.face_to_vertex_average @ PiA.reshape(len(PiA), 9)).reshape(-1, 3, 3)
    E = surface.frames.vertex_basis
    PiLoc = np.einsum("via,vab,vjb->vij", E, PiV, E)
    return xi.W2 - np.einsum("vi,vij->vj", xi.W1, PiLoc)


def multiplier_m(surface: Surface, xi: ShellState, V: np.ndarray) -> ShellState:
    """Directional derivatives along V: (D_V W1, D_V W2, V(w1), V(w2)).

    Computed per face and carried to vertices by area-weighted averaging.
    """
    Vf = surface.face_vector(V)
    DVW1 = np.einsum("fij,fj->fi", surface.differential(xi.W1), Vf)
    DVW2 = np.einsum("fij,fj->fi", surface.differential(xi.W2), Vf)
    Vw1 = np.einsum("fj,fj->f", surface.gradient(xi.w1), Vf)
    Vw2 = np.einsum("fj,fj->f", surface.gradient(xi.w2), Vf)
    return ShellState(surface.vertex_vector(DVW1), surface.vertex_vector(DVW2),
                      surface.vertex_scalar(Vw1), surface.vertex_scalar(Vw2))


# ---------------------------------------------------------------------------
# sparse operators

def _local_blocks(surface: Surface):
    """Per-face linear maps from the 3 x 6 local DOFs to each strain.

    Returns arrays ``L[f, a, comp, dof]``.
    """
    P = surface.vertex_to_face  # (nf, 3, 2, 2)
    B = surface.basis_gradients  # (nf, 3, 2)
    f = surface.forms
    DPi = sym(surface.Pi_derivative)  # symmetrize (i, j) for each k
    nf = surface.mesh.n_faces
    third = 1.0 / 3.0

    # sym gradient block: G[f, a, i, j, k] = 1/2 (P[a,i,k] B[a,j] + P[a,j,k] B[a,i])
    G = np.einsum("faik,faj->faijk", P, B)
    G = 0.5 * (G + np.swapaxes(G, 2, 3))

    U = np.zeros((nf, 3, 2, 2, 6))
    U[..., 0:2] = G
    U[..., 4] = third * f.Pi[:, None]

    X = np.zeros((nf, 3, 2, 2, 6))
    X[..., 2:4] = G
    X[..., 0:2] = -third * np.einsum("famk,fmij->faijk", P, DPi)
    X[..., 4] = third * f.c[:, None]
    X[..., 5] = third * f.Pi[:, None]

    Ph = np.zeros((nf, 3, 2, 6))
    Ph[..., 4] = 0.5 * B
    Ph[..., 0:2] = -third * np.einsum("faik,fij->fajk", P, f.Pi)
    Ph[..., 2:4] = 0.5 * third * P

    Dw2 = np.zeros((nf, 3, 2, 6))
    Dw2[..., 5] = B

    w2 = np.zeros((nf, 3, 1, 6))
    w2[..., 5] = third

    return {
        "Upsilon": U.reshape(nf, 3, 4, 6),
        "chi0": X.reshape(nf, 3, 4, 6),
        "phi0": Ph,
        "Dw2": Dw2,
        "w2": w2,
    }


def _to_matrix(surface: Surface, L: np.ndarray) -> sp.csr_matrix:
    nf, _, nc, nd = L.shape
    t = surface.mesh.triangles
    rows = np.broadcast_to(np.arange(nf)[:, None, None, None] * nc
                           + np.arange(nc)[None, None, :, None], L.shape)
    cols = np.broadcast_to(DOFS_PER_VERTEX * t[:, :, None, None]
                           + np.arange(nd)[None, None, None, :], L.shape)
    return sp.csr_matrix((L.ravel(), (rows.ravel(), cols.ravel())),
                         shape=(nf * nc, DOFS_PER_VERTEX * surface.mesh.n_vertices))


def strain_operators(surface: Surface) -> dict[str, sp.csr_matrix]:
    """Sparse maps from the flat state vector to per-face strain entries.

    Keys: ``Upsilon`` and ``chi0`` (nf*4 rows, row-major 2x2), ``phi0`` and
    ``Dw2`` (nf*2), ``w2`` (nf, the face average).
    """
    return {k: _to_matrix(surface, L) for k, L in _local_blocks(surface).items()}


@lru_cache(maxsize=None)
def trace_selector(nf: int) -> sp.csr_matrix:
    """(nf, 4*nf) map from row-major 2x2 entries to the trace."""
    rows = np.repeat(np.arange(nf), 2)
    cols = (4 * np.arange(nf)[:, None] + np.array([0, 3])[None]).ravel()
    return sp.csr_matrix((np.ones(2 * nf), (rows, cols)), shape=(nf, 4 * nf))


def differential_operator(surface: Surface) -> sp.csr_matrix:
    """Sparse map from a tangent vertex field (2 comps per vertex) to the
    per-face covariant differential, row-major 2x2 entries."""
    P = surface.vertex_to_face
    B = surface.basis_gradients
    nf = surface.mesh.n_faces
    L = np.einsum("faik,faj->faijk", P, B).reshape(nf, 3, 4, 2)
    t = surface.mesh.triangles
    rows = np.broadcast_to(4 * np.arange(nf)[:, None, None, None]
                           + np.arange(4)[None, None, :, None], L.shape)
    cols = np.broadcast_to(2 * t[:, :, None, None] + np.arange(2)[None, None, None, :], L.shape)
    return sp.csr_matrix((L.ravel(), (rows.ravel(), cols.ravel())),
                         shape=(4 * nf, 2 * surface.mesh.n_vertices))


def transpose_rows(nf: int) -> np.ndarray:
    """Row permutation swapping (i, j) -> (j, i) in row-major 2x2 blocks."""
    return (4 * np.arange(nf)[:, None] + np.array([0, 2, 1, 3])[None]).ravel()
