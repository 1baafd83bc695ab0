"""Time integration of xi_tt + A xi + a xi_t = 0, energy traces, decay fits
and the discrete identity checks."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import trapezoid

from . import kernels
from .escape import decompose_DV
from .forms import AssembledSystem, _restrict, b_form, state_mass, state_stiffness
from .geometry import G_map, Surface, sym
from .kinematics import (ShellState, differential_operator, strain_phi0, trace_selector,
                         transpose_rows)

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    t_end: float = 1.0
    newmark_beta: float = 0.25
    newmark_gamma: float = 0.5
    sample_stride: int = 1
    solver_tol: float = 1e-10
    solver_maxiter: int = 10_000
    solver: str = "direct"  # or "cg"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < self.dt * (1 - 1e-12):
            raise ValueError("t_end must be at least dt")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")
        # unconditionally stable average-acceleration family
        if not (self.newmark_gamma >= 0.5 and self.newmark_beta >= 0.25 * (0.5 + self.newmark_gamma) ** 2
                and self.newmark_beta <= 0.5):
            raise ValueError("Newmark parameters outside the unconditionally stable range")
        if self.solver not in ("direct", "cg"):
            raise ValueError(f"unknown solver {self.solver!r}")

    @property
    def n_steps(self) -> int:
        n = int(round(self.t_end / self.dt))
        if abs(n * self.dt - self.t_end) > 1e-9 * max(1.0, self.t_end):
            raise ValueError("t_end must be a multiple of dt")
        return n


@dataclass
class EnergyTrace:
    times: np.ndarray
    energies: np.ndarray
    dissipation: np.ndarray  # cumulative trapezoid of xi_t^T C xi_t
    states: np.ndarray | None = field(default=None, repr=False)  # (nsamp, 2, n)
    c1: float = float("nan")
    c2: float = float("nan")
    r_squared: float = float("nan")

    def to_csv(self, header: dict | None = None) -> str:
        buf = io.StringIO()
        for k, v in (header or {}).items():
            buf.write(f"# {k}: {v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "E", "dissipation_cum"])
        for t, e, d in zip(self.times, self.energies, self.dissipation):
            w.writerow([f"{t:.10g}", f"{e:.17g}", f"{d:.17g}"])
        return buf.getvalue()


@dataclass
class Motion:
    """Displacement, velocity and acceleration on the free DOFs."""

    u: np.ndarray
    v: np.ndarray
    a: np.ndarray

    def copy(self) -> "Motion":
        return Motion(self.u.copy(), self.v.copy(), self.a.copy())


def _effective(system, dt, cfg):
    return (system.mass + cfg.newmark_gamma * dt * system.damping
            + cfg.newmark_beta * dt * dt * system.stiffness).tocsr()


def initial_motion(system: AssembledSystem, u0, v0, f0=None, backend=None) -> Motion:
    """Consistent initial acceleration from M a = f - C v - K u."""
    u0 = system.restrict(u0) if isinstance(u0, ShellState) else np.array(u0, dtype=float)
    v0 = system.restrict(v0) if isinstance(v0, ShellState) else np.array(v0, dtype=float)
    rhs = -(system.damping @ v0) - system.stiffness @ u0
    if f0 is not None:
        rhs = rhs + f0
    if not rhs.any():
        return Motion(u0, v0, np.zeros_like(u0))
    a0 = kernels.factorize(system.mass, backend).solve(rhs)
    return Motion(u0, v0, a0)


def step(system: AssembledSystem, motion: Motion, dt: float, config: SimConfig | None = None,
         factor=None, f_next=None) -> Motion:
    """One Newmark step; returns the new motion."""
    cfg = config or SimConfig(dt=dt, t_end=dt)
    b, g = cfg.newmark_beta, cfg.newmark_gamma
    u, v, a = motion.u, motion.v, motion.a
    rhs = -(system.damping @ (v + (1 - g) * dt * a)) \
        - system.stiffness @ (u + dt * v + (0.5 - b) * dt * dt * a)
    if f_next is not None:
        rhs = rhs + f_next
    if factor is not None:
        a_new = factor.solve(rhs)
    else:
        Keff = _effective(system, dt, cfg)
        a_new, it, res = kernels.pcg(Keff, rhs, a, tol=cfg.solver_tol, maxiter=cfg.solver_maxiter)
        if res > cfg.solver_tol:
            raise SolverError(f"CG did not converge: relative residual {res:.3e} after {it} iterations")
    u_new = u + dt * v + dt * dt * ((0.5 - b) * a + b * a_new)
    v_new = v + dt * ((1 - g) * a + g * a_new)
    return Motion(u_new, v_new, a_new)


def simulate(system: AssembledSystem, initial, config: SimConfig, forcing=None,
             keep_states=False, backend=None):
    """Integrate from ``initial`` (a Motion, or a (u0, v0) pair).

    ``forcing`` is None or an array (n_steps + 1, n_dofs) of loads at the
    step times. Returns ``(trace, final Motion)``.
    """
    if not isinstance(initial, Motion):
        u0, v0 = initial
        initial = initial_motion(system, u0, v0, None if forcing is None else forcing[0], backend)
    m = initial.copy()
    n = config.n_steps
    dt = config.dt
    stride = config.sample_stride
    if forcing is not None:
        forcing = np.asarray(forcing, dtype=float)
        if forcing.shape != (n + 1, system.n_dofs):
            raise ValueError(f"forcing must have shape {(n + 1, system.n_dofs)}")
    if config.solver == "direct":
        factor = kernels.factorize(_effective(system, dt, config), backend)
        E, D, S = kernels.newmark_loop(system.mass, system.damping, system.stiffness, factor,
                                       m.u, m.v, m.a, dt, config.newmark_beta,
                                       config.newmark_gamma, n, stride, forcing, keep_states,
                                       backend)
    else:
        E, D, S = _cg_loop(system, m, config, forcing, keep_states)
    idx = np.arange(0, n + 1, stride)
    if idx[-1] != n:
        idx = np.append(idx, n)
    trace = EnergyTrace(idx * dt, np.asarray(E), np.asarray(D),
                        np.asarray(S) if keep_states else None)
    return trace, m


def _cg_loop(system, m, cfg, forcing, keep_states):
    n, stride, dt = cfg.n_steps, cfg.sample_stride, cfg.dt
    C = system.damping
    en = lambda mm: 0.5 * mm.v @ (system.mass @ mm.v) + 0.5 * mm.u @ (system.stiffness @ mm.u)  # noqa: E731
    E, D, S = [en(m)], [0.0], [np.stack([m.u, m.v])] if keep_states else []
    cum, pc = 0.0, m.v @ (C @ m.v)
    for k in range(1, n + 1):
        new = step(system, m, dt, cfg, None, None if forcing is None else forcing[k])
        m.u[:], m.v[:], m.a[:] = new.u, new.v, new.a
        nc = m.v @ (C @ m.v)
        cum += 0.5 * dt * (pc + nc)
        pc = nc
        if k % stride == 0 or k == n:
            E.append(en(m))
            D.append(cum)
            if keep_states:
                S.append(np.stack([m.u, m.v]))
    return np.array(E), np.array(D), np.array(S) if keep_states else None


# ---------------------------------------------------------------------------
# checks on traces

def energy_balance_check(trace: EnergyTrace) -> float:
    """max_n |E(t_n) - E(0) + D_n| / E(0) with D_n the cumulative trapezoid
    dissipation; second order in dt."""
    E0 = trace.energies[0]
    if E0 <= 0:
        return 0.0
    return float(np.max(np.abs(trace.energies - E0 + trace.dissipation)) / E0)


def energy_drift(trace: EnergyTrace) -> float:
    E0 = trace.energies[0]
    return float(np.max(np.abs(trace.energies - E0)) / E0) if E0 > 0 else 0.0


def _envelope_indices(E, D):
    """Local maxima of E; for monotone traces, local minima of the
    dissipation rate (the plateaus of the staircase)."""
    i = np.flatnonzero((E[1:-1] > E[:-2]) & (E[1:-1] >= E[2:])) + 1
    if i.size >= 3:
        return i
    if D is not None and np.ptp(D) > 0:
        rate = np.diff(D)
        j = np.flatnonzero((rate[1:-1] < rate[:-2]) & (rate[1:-1] <= rate[2:])) + 1
        if j.size >= 3:
            return j
    return np.arange(len(E))


def decay_fit(trace: EnergyTrace, window=None, envelope=True):
    """Fit E(t) ~ c1 E(0) exp(-c2 t) on the window (default [0.1 T, T]).

    Returns ``(c1, c2, r2)`` and stores them on the trace.
    """
    t, E = np.asarray(trace.times), np.asarray(trace.energies)
    E0 = E[0]
    T = t[-1]
    lo, hi = window if window is not None else (0.1 * T, T)
    keep = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    floor = 1e2 * np.finfo(float).eps * E0
    if (E[keep] < floor).any():
        cut = np.flatnonzero(keep & (E < floor))[0]
        log.info("decay_fit: window truncated at t = %.4g (energy below roundoff)", t[cut])
        keep &= np.arange(len(t)) < cut
    idx = np.flatnonzero(keep)
    if idx.size < 2:
        raise ValueError("decay window holds fewer than two usable samples")
    if envelope:
        D = trace.dissipation[idx] if trace.dissipation is not None else None
        sel = _envelope_indices(E[idx], D)
        idx = idx[sel]
    y = np.log(E[idx])
    slope, icpt = np.polyfit(t[idx], y, 1)
    pred = slope * t[idx] + icpt
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    c2 = max(0.0, -float(slope))
    c1 = float(np.exp(icpt) / E0)
    trace.c1, trace.c2, trace.r_squared = c1, c2, r2
    return c1, c2, r2


def staircase_ok(trace: EnergyTrace, period: float, tol=1e-10) -> bool:
    """E(m T*) <= E((m - 1) T*) for every window of length ``period``."""
    t, E = trace.times, trace.energies
    marks = np.arange(0.0, t[-1] + 1e-12, period)
    vals = np.interp(marks, t, E)
    return bool(np.all(np.diff(vals) <= tol * E[0]))


# ---------------------------------------------------------------------------
# virial identity

def _weighted_stiffness(system: AssembledSystem, pf: np.ndarray) -> sp.csr_matrix:
    """J~ with a per-face weight p: int p J(xi, xi)."""
    return _restrict(state_stiffness(system.surface, system.params, pf),
                     system.free_dofs)


def virial_identity_check(system: AssembledSystem, trace: EnergyTrace, p) -> float:
    """Time-integrated residual of d/dt <xi_t, p xi> = <p xi_t, xi_t> - J~_p(xi, xi)
    - <a xi_t, p xi>, relative to the largest term.

    Needs state snapshots (``keep_states``); the time integral is the
    trapezoid rule on the samples.
    """
    if trace.states is None:
        raise ValueError("trace carries no state snapshots")
    surf = system.surface
    nv = surf.mesh.n_vertices
    p = np.broadcast_to(np.asarray(p, dtype=float), (nv,))
    if not p.any():
        return 0.0
    Mp = _restrict(state_mass(surf, p), system.free_dofs)
    Kp = _weighted_stiffness(system, surf.face_scalar(p))
    ap = system.damping_profile * p
    Cp = _restrict(state_mass(surf, ap), system.free_dofs) if ap.any() \
        else sp.csr_matrix(Mp.shape)
    U, V = trace.states[:, 0], trace.states[:, 1]
    X = np.einsum("ni,ni->n", V, (Mp @ U.T).T)
    kin = np.einsum("ni,ni->n", V, (Mp @ V.T).T)
    pot = np.einsum("ni,ni->n", U, (Kp @ U.T).T)
    dmp = np.einsum("ni,ni->n", V, (Cp @ U.T).T)
    t = trace.times
    integ = lambda f: float(trapezoid(f, t))  # noqa: E731
    lhs = X[-1] - X[0]
    terms = [abs(lhs), integ(np.abs(kin)), integ(np.abs(pot)), integ(np.abs(dmp))]
    res = lhs - (integ(kin) - integ(pot) - integ(dmp))
    scale = max(terms)
    return float(abs(res) / scale) if scale > 0 else 0.0


# ---------------------------------------------------------------------------
# multiplier densities

def e_density(surface: Surface, xi: ShellState, V: np.ndarray, beta: float) -> np.ndarray:
    """2 b(S(W1), G(V, DW1)) + 2 b(S(W2), G(V, DW2)) + 4 v |phi0|^2 + v |Dw2|^2."""
    DV = surface.differential(V)
    v = decompose_DV(DV).v
    D1, D2 = surface.differential(xi.W1), surface.differential(xi.W2)
    S1, S2 = sym(D1), sym(D2)
    out = 2.0 * b_form(S1, G_map(DV, D1), beta) + 2.0 * b_form(S2, G_map(DV, D2), beta)
    phi = strain_phi0(surface, xi)
    out += 4.0 * v * np.einsum("fi,fi->f", phi, phi)
    g2 = surface.gradient(xi.w2)
    out += v * np.einsum("fi,fi->f", g2, g2)
    return out


def des_b_certificate(surface: Surface, V: np.ndarray, beta: float, lambda0=None,
                      certificate=None, dense_limit: int = 4000) -> dict:
    """Smallest C_lo >= 0 with
    int b(S, G(V, DW)) - sigma1 int b(S, S) + C_lo |W|^2 >= 0 on clamped W.

    ``certificate`` is the escape certificate of V (required; an
    uncertified field is rejected).
    """
    if certificate is None or not certificate.get("pass", False):
        raise ValueError("des_b_certificate needs a certified escape field")
    mesh = surface.mesh
    nf = mesh.n_faces
    DV = surface.differential(V)
    d = decompose_DV(DV)
    sigma1 = float(d.v.min() - (1.0 + 2.0 * beta) * 0.5 * np.abs(d.l).max())
    D = differential_operator(surface)
    S = 0.5 * (D + D[transpose_rows(nf)])
    # right multiplication by DV on row-major 2x2 blocks
    R = sp.block_diag([np.kron(np.eye(2), DVf.T) for DVf in DV], format="csr")
    G = R @ S
    A4 = sp.diags(np.repeat(mesh.face_areas, 4))
    Ad = sp.diags(mesh.face_areas)
    Tr = trace_selector(nf)
    QG = S.T @ A4 @ G + beta * (Tr @ S).T @ Ad @ (Tr @ G)
    QS = S.T @ A4 @ S + beta * (Tr @ S).T @ Ad @ (Tr @ S)
    free_v = np.flatnonzero(~mesh.boundary_mask)
    free = (2 * free_v[:, None] + np.arange(2)).ravel()
    Q = _restrict(0.5 * (QG + QG.T) - sigma1 * QS, free)
    M = _restrict(surface.vector_mass(), free)
    n = Q.shape[0]
    if n > dense_limit:
        lo = float(spla.eigsh(Q, k=1, M=M, which="SA", tol=1e-10)[0][0])
    else:
        lo = float(sla.eigh(Q.toarray(), M.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0])
    scale = float(np.abs(Q).max()) / float(M.diagonal().max())
    C_lo = 0.0 if lo >= -1e-10 * scale else -lo
    return {"sigma1": sigma1, "C_lo": C_lo, "min_eig": lo, "n_dofs": n}
