"""Material parameters, the densities b and J, assembled operators and the
eigen constants (coercivity c3, Korn lambda, lambda0)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .geometry import Surface, inner, trace
from .kinematics import (DOFS_PER_VERTEX, ShellState, differential_operator,
                         strain_chi0, strain_operators, strain_phi0,
                         strain_Upsilon, trace_selector, transpose_rows)

log = logging.getLogger(__name__)


class EigenError(RuntimeError):
    """Eigen-iteration failed to converge."""


@dataclass(frozen=True)
class MaterialParams:
    E_young: float = 1.0
    mu_poisson: float = 0.3
    h_thickness: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.mu_poisson < 0.5:
            raise ValueError(f"Poisson ratio must lie in (0, 1/2), got {self.mu_poisson}")
        if not self.h_thickness > 0.0:
            raise ValueError(f"thickness must be positive, got {self.h_thickness}")
        if not self.E_young > 0.0:
            raise ValueError(f"Young modulus must be positive, got {self.E_young}")

    @property
    def alpha(self) -> float:
        return self.E_young / (1.0 + self.mu_poisson)

    @property
    def beta(self) -> float:
        return self.mu_poisson / (1.0 - 2.0 * self.mu_poisson)

    @property
    def gamma(self) -> float:
        return self.h_thickness ** 2 / 12.0


def b_form(T1: np.ndarray, T2: np.ndarray, beta: float) -> np.ndarray:
    """b(T1, T2) = <T1, T2> + beta tr(T1) tr(T2), per face."""
    return inner(T1, T2) + beta * trace(T1) * trace(T2)


def J_density(surface: Surface, xi: ShellState, u: ShellState,
              params: MaterialParams) -> np.ndarray:
    """Pointwise strain-energy bilinear density, per face."""
    beta, gamma = params.beta, params.gamma
    sg = np.sqrt(gamma)
    U1, U2 = strain_Upsilon(surface, xi), strain_Upsilon(surface, u)
    X1, X2 = strain_chi0(surface, xi), strain_chi0(surface, u)
    P1, P2 = strain_phi0(surface, xi), strain_phi0(surface, u)
    a2, b2 = surface.face_scalar(xi.w2), surface.face_scalar(u.w2)
    out = 2.0 * inner(U1, U2) + 4.0 * np.einsum("fi,fi->f", P1, P2)
    out += 2.0 * beta * (trace(U1) + a2 / sg) * (trace(U2) + b2 / sg)
    out += 2.0 * beta * trace(X1) * trace(X2) + 2.0 * inner(X1, X2)
    out += np.einsum("fi,fi->f", surface.gradient(xi.w2), surface.gradient(u.w2))
    out += (2.0 / gamma) * a2 * b2
    return out


def _embed(nv: int, offset: int, width: int) -> sp.csr_matrix:
    """Selection matrix placing a (width per vertex) block into the 6-DOF layout."""
    rows = (DOFS_PER_VERTEX * np.arange(nv)[:, None] + offset + np.arange(width)).ravel()
    cols = np.arange(nv * width)
    return sp.csr_matrix((np.ones(nv * width), (rows, cols)),
                         shape=(DOFS_PER_VERTEX * nv, nv * width))


def state_mass(surface: Surface, weight=None) -> sp.csr_matrix:
    """Consistent mass on the full 6-DOF layout, optionally weighted."""
    nv = surface.mesh.n_vertices
    Mv = surface.vector_mass(weight)
    Ms = surface.scalar_mass(weight)
    out = sp.csr_matrix((DOFS_PER_VERTEX * nv, DOFS_PER_VERTEX * nv))
    for off, width, blk in ((0, 2, Mv), (2, 2, Mv), (4, 1, Ms), (5, 1, Ms)):
        S = _embed(nv, off, width)
        out = out + S @ blk @ S.T
    return out.tocsr()


def state_stiffness(surface: Surface, params: MaterialParams, face_weight=None) -> sp.csr_matrix:
    """J~ on the full 6-DOF layout (one-point face quadrature), optionally
    weighted per face."""
    ops = strain_operators(surface)
    nf = surface.mesh.n_faces
    A = surface.mesh.face_areas
    if face_weight is not None:
        A = A * np.asarray(face_weight, dtype=float)
    A2, A4 = sp.diags(np.repeat(A, 2)), sp.diags(np.repeat(A, 4))
    Ad = sp.diags(A)
    beta, gamma = params.beta, params.gamma
    Tr = trace_selector(nf)
    U, X, Ph, D2, w2 = (ops[k] for k in ("Upsilon", "chi0", "phi0", "Dw2", "w2"))
    trU = Tr @ U + w2 / np.sqrt(gamma)
    trX = Tr @ X
    K = 2.0 * U.T @ A4 @ U + 4.0 * Ph.T @ A2 @ Ph
    K = K + 2.0 * beta * trU.T @ Ad @ trU + 2.0 * beta * trX.T @ Ad @ trX
    K = K + 2.0 * X.T @ A4 @ X + D2.T @ A2 @ D2 + (2.0 / gamma) * w2.T @ Ad @ w2
    K = 0.5 * (K + K.T)
    return K.tocsr()


@dataclass(eq=False)
class AssembledSystem:
    surface: Surface
    params: MaterialParams
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    damping: sp.csr_matrix
    free_vertices: np.ndarray
    free_dofs: np.ndarray
    damping_profile: np.ndarray = field(repr=False)

    @property
    def n_dofs(self) -> int:
        return len(self.free_dofs)

    @property
    def n_vertices(self) -> int:
        return self.surface.mesh.n_vertices

    def restrict(self, x) -> np.ndarray:
        """Full state (vector or ShellState) -> free DOF vector."""
        if isinstance(x, ShellState):
            x = x.to_vector()
        return np.asarray(x, dtype=float)[self.free_dofs]

    def expand(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(DOFS_PER_VERTEX * self.n_vertices)
        out[self.free_dofs] = x
        return out

    def state(self, x: np.ndarray) -> ShellState:
        return ShellState.from_vector(self.expand(x))

    def with_damping(self, a) -> "AssembledSystem":
        """Same stiffness and mass, new damping profile."""
        a = _check_profile(a, self.n_vertices)
        C = _restrict(state_mass(self.surface, a), self.free_dofs) if a.any() \
            else sp.csr_matrix((self.n_dofs, self.n_dofs))
        return AssembledSystem(self.surface, self.params, self.stiffness, self.mass, C,
                               self.free_vertices, self.free_dofs, a)


def _check_profile(a, nv):
    a = np.zeros(nv) if a is None else np.broadcast_to(np.asarray(a, dtype=float), (nv,)).copy()
    if (a < 0).any() or not np.isfinite(a).all():
        raise ValueError("damping profile must be finite and nonnegative")
    return a


def _restrict(A, idx):
    return sp.csr_matrix(A)[idx][:, idx].tocsr()


def assemble(surface: Surface, params: MaterialParams, damping=None) -> AssembledSystem:
    """Mass, stiffness and damping on the clamped (interior) DOFs."""
    mesh = surface.mesh
    free_v = np.flatnonzero(~mesh.boundary_mask)
    if free_v.size == 0:
        raise ValueError("every vertex is clamped; the system is empty")
    free = (DOFS_PER_VERTEX * free_v[:, None] + np.arange(DOFS_PER_VERTEX)).ravel()
    a = _check_profile(damping, mesh.n_vertices)
    K = _restrict(state_stiffness(surface, params), free)
    M = _restrict(state_mass(surface), free)
    C = _restrict(state_mass(surface, a), free) if a.any() \
        else sp.csr_matrix((len(free), len(free)))
    return AssembledSystem(surface, params, K, M, C, free_v, free, a)


def energy(system: AssembledSystem, u, v) -> float:
    """E = 1/2 v^T M v + 1/2 u^T K u on free DOF vectors (or ShellStates)."""
    if isinstance(u, ShellState):
        u = system.restrict(u)
    if isinstance(v, ShellState):
        v = system.restrict(v)
    return float(0.5 * v @ (system.mass @ v) + 0.5 * u @ (system.stiffness @ u))


# ---------------------------------------------------------------------------
# eigen constants

@dataclass(frozen=True)
class EigenResult:
    values: np.ndarray
    vectors: np.ndarray
    iterations: int
    residual: float


def smallest_eigenpairs(A, B, k=1, tol=1e-10, maxiter=500, seed=0,
                        backend=None) -> EigenResult:
    """Smallest generalized eigenpairs of SPD (A, B).

    Shift-invert about 0: Lanczos on A^{-1} B with a direct factor of A for
    the inner solves. Plain block inverse iteration stalls on the clustered
    low spectrum of the Korn forms, the Krylov acceleration does not.
    """
    A = sp.csr_matrix(A)
    B = sp.csr_matrix(B)
    n = A.shape[0]
    if n <= max(4 * k, 40):
        vals, vecs = sla.eigh(A.toarray(), B.toarray())
        return EigenResult(vals[:k], vecs[:, :k], 0, 0.0)
    fac = kernels.factorize(A, backend)
    op = spla.LinearOperator((n, n), matvec=fac.solve, dtype=float)
    v0 = np.random.default_rng(seed).standard_normal(n)
    try:
        vals, vecs = spla.eigsh(A, k=k, M=B, sigma=0.0, which="LM", OPinv=op,
                                tol=0.01 * tol, maxiter=maxiter, v0=v0,
                                ncv=min(n, max(2 * k + 1, 60)))
    except spla.ArpackNoConvergence as exc:
        vals, vecs = exc.eigenvalues, exc.eigenvectors
        if len(vals):
            R = A @ vecs - (B @ vecs) * vals
            res = float(np.max(np.linalg.norm(R, axis=0) / np.linalg.norm(A @ vecs, axis=0)))
        else:
            res = float("nan")
        raise EigenError(f"eigen-iteration did not converge in {maxiter} restarts "
                         f"(residual {res:.3e})") from exc
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    vecs = vecs / np.sqrt(np.einsum("ij,ij->j", vecs, B @ vecs))
    R = A @ vecs - (B @ vecs) * vals
    res = float(np.max(np.linalg.norm(R, axis=0) / np.linalg.norm(A @ vecs, axis=0)))
    return EigenResult(vals, vecs, 0, res)


def coercivity_constant(system: AssembledSystem, **kw) -> float:
    """c3: smallest generalized eigenvalue of (K, M)."""
    return float(smallest_eigenpairs(system.stiffness, system.mass, **kw).values[0])


@dataclass(frozen=True)
class KornForms:
    """Quadratic forms on clamped tangent fields (2 DOFs per free vertex)."""

    korn: sp.csr_matrix  # int |DW + D*W|^2
    h1: sp.csr_matrix  # int |W|^2 + |DW|^2
    grad: sp.csr_matrix  # int |DW|^2
    b_plus_mass: sp.csr_matrix  # int b(S(W), S(W)) + |W|^2
    free: np.ndarray


def korn_forms(surface: Surface, beta: float) -> KornForms:
    mesh = surface.mesh
    nf = mesh.n_faces
    free_v = np.flatnonzero(~mesh.boundary_mask)
    if free_v.size == 0:
        raise ValueError("every vertex is clamped; the system is empty")
    free = (2 * free_v[:, None] + np.arange(2)).ravel()
    D = differential_operator(surface)
    S = 0.5 * (D + D[transpose_rows(nf)])
    A4 = sp.diags(np.repeat(mesh.face_areas, 4))
    Ad = sp.diags(mesh.face_areas)
    trS = trace_selector(nf) @ S
    Mv = surface.vector_mass()
    grad = D.T @ A4 @ D
    korn = 4.0 * S.T @ A4 @ S
    bS = S.T @ A4 @ S + beta * trS.T @ Ad @ trS
    sel = lambda X: _restrict(0.5 * (X + X.T), free)  # noqa: E731
    return KornForms(sel(korn), sel(Mv + grad), sel(grad), sel(bS + Mv), free)


def korn_lambda(surface: Surface, beta: float = 0.0, **kw) -> float:
    """min over clamped W of |DW + D*W|^2 / |W|^2_H1."""
    f = korn_forms(surface, beta)
    return float(smallest_eigenpairs(f.korn, f.h1, **kw).values[0])


@dataclass(frozen=True)
class Lambda0:
    korn_lambda: float
    from_korn: float  # 4 / lambda
    direct: float  # max of |DW|^2 / (b(S,S) + |W|^2)
    value: float  # max(1, 4 / lambda), the constant used downstream
    certificate: float  # (value - direct) / value, >= 0 when the bound holds
    factor_certified: bool  # (1 + 1e-10) value A_b - A_D admits a Cholesky factor

    def as_dict(self):
        return {"korn_lambda": self.korn_lambda, "lambda0_korn": self.from_korn,
                "lambda0_direct": self.direct, "lambda0": self.value,
                "certificate": self.certificate, "factor_certified": self.factor_certified}


def lambda0(surface: Surface, beta: float, **kw) -> Lambda0:
    """lambda0 from the Korn constant, with the direct Rayleigh estimate.

    The bound lambda0 * int[b(S,S) + |W|^2] >= int |DW|^2 holds for all clamped
    W iff lambda0 >= direct, so ``certificate`` is the normalized smallest
    eigenvalue of that generalized problem.
    """
    f = korn_forms(surface, beta)
    lam = float(smallest_eigenpairs(f.korn, f.h1, **kw).values[0])
    inv_direct = float(smallest_eigenpairs(f.b_plus_mass, f.grad, **kw).values[0])
    direct = 1.0 / inv_direct
    from_korn = 4.0 / lam
    value = max(1.0, from_korn)
    if from_korn < 1.0:
        log.info("4/lambda = %.4g < 1; using lambda0 = 1", from_korn)
    ok = kernels.is_positive_definite((1.0 + 1e-10) * value * f.b_plus_mass - f.grad)
    return Lambda0(lam, from_korn, direct, value, (value - direct) / value, ok)
