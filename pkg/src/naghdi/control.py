"""Exact controls by Russell's principle: two damped solves and a Neumann
series for L = I - K."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .dynamics import Motion, SimConfig, decay_fit, initial_motion, simulate

log = logging.getLogger(__name__)


class ControlError(RuntimeError):
    pass


class HorizonTooShort(ControlError):
    def __init__(self, estimate: float, T: float):
        super().__init__(f"time horizon too short: estimated |K| = {estimate:.6f} at T = {T:g}")
        self.estimate = estimate
        self.T = T


def worker_count(default: int = 4) -> int:
    try:
        cap = int(os.environ.get("NAGHDI_THREADS", default))
    except ValueError:
        cap = default
    return max(1, min(cap, os.cpu_count() or 1))


def energy_norm(system, u, v) -> float:
    """sqrt(2E) = sqrt(v^T M v + u^T K u)."""
    return float(np.sqrt(max(v @ (system.mass @ v) + u @ (system.stiffness @ u), 0.0)))


class _Propagator:
    """Damped (or undamped) Newmark solves of fixed length, factor cached."""

    def __init__(self, system, T, dt, backend=None):
        self.system = system
        self.cfg = SimConfig(dt=dt, t_end=T)
        self.n_steps = self.cfg.n_steps
        eff = (system.mass + 0.5 * dt * system.damping + 0.25 * dt * dt * system.stiffness)
        self.factor = kernels.factorize(sp.csr_matrix(eff), backend)
        self.mass_factor = kernels.factorize(system.mass, backend)
        self.backend = backend

    def run(self, u0, v0, keep_states=False, forcing=None, a0=None):
        sysm = self.system
        if a0 is None:
            rhs = -(sysm.damping @ v0) - sysm.stiffness @ u0
            if forcing is not None:
                rhs = rhs + forcing[0]
            a0 = self.mass_factor.solve(rhs) if rhs.any() else np.zeros_like(u0)
        m = Motion(np.array(u0, dtype=float), np.array(v0, dtype=float), np.array(a0, dtype=float))
        E, D, S = kernels.newmark_loop(sysm.mass, sysm.damping, sysm.stiffness, self.factor,
                                       m.u, m.v, m.a, self.cfg.dt, 0.25, 0.5, self.n_steps,
                                       1, forcing, keep_states, self.backend)
        return m, E, D, (np.asarray(S) if keep_states else None)


def K_map(system, eta0, eta1, T, dt, propagator=None, backend=None):
    """K(eta0, eta1) = (-theta(T), theta_t(T)) where eta solves the damped
    system forward and theta solves it from (-eta(T), eta_t(T))."""
    prop = propagator or _Propagator(system, T, dt, backend)
    eta, *_ = prop.run(eta0, eta1)
    theta, *_ = prop.run(-eta.u, eta.v)
    return -theta.u, theta.v.copy()


@dataclass
class KNormEstimate:
    estimate: float
    per_probe: list
    decay_bound: float  # c1 exp(-c2 T) from a calibration run
    iterations: int

    def as_dict(self):
        return {"K_norm_estimate": self.estimate, "per_probe": self.per_probe,
                "decay_bound": self.decay_bound, "iterations": self.iterations}


def _smooth_probe(system, rng):
    """Random combination of low-frequency content: a few smoothing passes
    of (M + K)^{-1} M on white noise, for both components."""
    n = system.n_dofs
    fac = kernels.factorize(system.mass + system.stiffness)
    u = rng.standard_normal(n)
    v = rng.standard_normal(n)
    for _ in range(2):
        u = fac.solve(system.mass @ u)
        v = fac.solve(system.mass @ v)
    return u, v


def _lanczos_top(system, prop, T, dt, v0, tol):
    """Largest eigenvalue of K by ARPACK in the energy inner product.

    K is self-adjoint there, so E K is symmetric for E = diag(K_stiff, M)
    and the pencil (E K, E) has the spectrum of K. Returns the Ritz value
    and the E-norm of its residual.
    """
    n = system.n_dofs
    E = sp.block_diag([system.stiffness, system.mass], format="csr")
    fk = kernels.factorize(system.stiffness)
    fm = kernels.factorize(system.mass)

    def apply_K(x):
        ku, kv = K_map(system, x[:n], x[n:], T, dt, prop)
        return np.r_[ku, kv]

    A = spla.LinearOperator((2 * n, 2 * n), matvec=lambda x: E @ apply_K(x), dtype=float)
    Minv = spla.LinearOperator((2 * n, 2 * n), dtype=float,
                               matvec=lambda y: np.r_[fk.solve(y[:n]), fm.solve(y[n:])])
    vals, vecs = spla.eigsh(A, k=1, M=E, Minv=Minv, which="LA", v0=v0, tol=tol,
                            ncv=min(2 * n, 20))
    x = vecs[:, 0] / np.sqrt(vecs[:, 0] @ (E @ vecs[:, 0]))
    r = apply_K(x) - vals[0] * x
    return float(vals[0]), float(np.sqrt(max(r @ (E @ r), 0.0)))


def estimate_K_norm(system, T, dt, n_probes=4, iters=40, rtol=1e-5, seed=0,
                    backend=None, calibrate=True, refine=True) -> KNormEstimate:
    """Energy-norm operator norm of K by power iteration.

    K = (R S_T)^2 with S_T the damped propagator and R flipping the
    velocity; R S_T is self-adjoint in the energy product, so K is
    self-adjoint and nonnegative and the power ratio converges to |K|.
    Probes start from independent random data and run concurrently. The
    power ratio approaches |K| from below and stalls on clustered top
    eigenvalues; ``refine`` restarts Lanczos from the best probe and adds
    the residual norm, which bounds the distance to the spectrum.
    """
    prop = _Propagator(system, T, dt, backend)
    rngs = [np.random.default_rng([seed, i]) for i in range(n_probes)]

    def one(rng):
        u, v = rng.standard_normal(system.n_dofs), rng.standard_normal(system.n_dofs)
        nrm = energy_norm(system, u, v)
        u, v = u / nrm, v / nrm
        est, last = 0.0, None
        k = 0
        for k in range(1, iters + 1):
            ku, kv = K_map(system, u, v, T, dt, prop)
            est = energy_norm(system, ku, kv)
            if est == 0.0:
                break
            u, v = ku / est, kv / est
            if last is not None and abs(est - last) <= rtol * est:
                break
            last = est
        return est, k, np.r_[u, v]

    with ThreadPoolExecutor(max_workers=min(worker_count(), n_probes)) as ex:
        res = list(ex.map(one, rngs))
    per = [r[0] for r in res]
    estimate = float(max(per))
    if refine and estimate > 0 and 2 * system.n_dofs > 2:
        best = res[int(np.argmax(per))][2]
        try:
            theta, rnorm = _lanczos_top(system, prop, T, dt, best, tol=min(rtol, 1e-6))
            estimate = max(estimate, theta + rnorm)
        except spla.ArpackNoConvergence:
            log.warning("Lanczos refinement did not converge; keeping the power estimate")
    bound = float("nan")
    if calibrate:
        u, v = _smooth_probe(system, np.random.default_rng([seed, 99]))
        tr, _ = simulate(system, (u, v), SimConfig(dt=dt, t_end=T), backend=backend)
        if tr.energies[-1] > 0 and tr.energies[0] > 0:
            try:
                c1, c2, _ = decay_fit(tr)
                bound = float(c1 * np.exp(-c2 * T))
            except ValueError:
                pass
    return KNormEstimate(estimate, per, bound, int(max(r[1] for r in res)))


@dataclass
class ControlProblem:
    system: object  # damped system (mass, stiffness, damping, n_dofs)
    initial: tuple  # (xi0, xi1) on free DOFs
    T: float
    dt: float
    target: tuple | None = None
    tol: float = 1e-10
    max_iters: int = 500
    n_probes: int = 4
    seed: int = 0


@dataclass
class ControlResult:
    load: np.ndarray  # (N + 1, n_dofs) nodal loads of F
    control_field: np.ndarray | None  # (N + 1, n_vertices, 6) values a(x) w(x) when available
    iterates: list  # Neumann residuals relative to |xi|
    K_norm_estimate: float
    decay_bound: float
    final_state_energy: float
    initial_energy: float
    eta: tuple = field(repr=False, default=None)
    times: np.ndarray = field(repr=False, default=None)

    @property
    def iterations(self) -> int:
        return len(self.iterates)

    def tail_ratios(self, skip: int = 3) -> np.ndarray:
        r = np.asarray(self.iterates)
        return r[1:][skip:] / r[:-1][skip:] if len(r) > skip + 1 else np.empty(0)

    def summary(self) -> dict:
        tr = self.tail_ratios()
        return {"iterations": self.iterations,
                "residuals": [float(x) for x in self.iterates],
                "K_norm_estimate": self.K_norm_estimate,
                "decay_bound": self.decay_bound,
                "tail_ratio_mean": float(np.mean(tr)) if tr.size else None,
                "initial_energy": self.initial_energy,
                "final_state_energy": self.final_state_energy,
                "final_energy_ratio": (self.final_state_energy / self.initial_energy
                                       if self.initial_energy > 0 else 0.0)}


class _Undamped:
    def __init__(self, system):
        self.mass = system.mass
        self.stiffness = system.stiffness
        self.damping = sp.csr_matrix(system.mass.shape)
        self.n_dofs = system.n_dofs


def _target_reduction(system, target, T, dt, backend):
    """Free undamped motion z with z(T) = target; returns z(0), z_t(0)."""
    prop = _Propagator(_Undamped(system), T, dt, backend)
    z, *_ = prop.run(np.asarray(target[0], float), -np.asarray(target[1], float))
    return z.u, -z.v


def russell_solve(problem: ControlProblem, backend=None, norm_estimate=None) -> ControlResult:
    """Neumann iteration eta <- xi + K eta, then the control
    F = -a (eta_t(t) + theta_t(T - t)) and an undamped replay."""
    sysm = problem.system
    T, dt = problem.T, problem.dt
    xi0 = np.asarray(problem.initial[0], dtype=float)
    xi1 = np.asarray(problem.initial[1], dtype=float)
    goal0, goal1 = xi0, xi1
    if problem.target is not None and (np.any(problem.target[0]) or np.any(problem.target[1])):
        z0, z1 = _target_reduction(sysm, problem.target, T, dt, backend)
        goal0, goal1 = xi0 - z0, xi1 - z1
    N = SimConfig(dt=dt, t_end=T).n_steps
    n = sysm.n_dofs
    e0 = 0.5 * energy_norm(sysm, xi0, xi1) ** 2
    if not (goal0.any() or goal1.any()):
        return ControlResult(np.zeros((N + 1, n)), None, [], float("nan"), float("nan"),
                             0.0, e0, (goal0, goal1), np.arange(N + 1) * dt)
    est = norm_estimate or estimate_K_norm(sysm, T, dt, problem.n_probes, seed=problem.seed,
                                           backend=backend)
    # a contraction too weak to reach tol within max_iters counts as too short
    if est.estimate >= 1.0 or problem.max_iters * np.log(est.estimate) > np.log(problem.tol):
        raise HorizonTooShort(est.estimate, T)
    prop = _Propagator(sysm, T, dt, backend)
    ref = energy_norm(sysm, goal0, goal1)
    u, v = goal0.copy(), goal1.copy()
    res = []
    for _ in range(problem.max_iters):
        ku, kv = K_map(sysm, u, v, T, dt, prop)
        nu, nv_ = goal0 + ku, goal1 + kv
        r = energy_norm(sysm, nu - u, nv_ - v) / ref
        res.append(r)
        u, v = nu, nv_
        if r < problem.tol:
            break
    else:
        raise ControlError(f"Neumann iteration did not converge in {problem.max_iters} "
                           f"iterations (residual {res[-1]:.3e})")
    # the two stored solves
    eta, _, _, Se = prop.run(u, v, keep_states=True)
    _, _, _, St = prop.run(-eta.u, eta.v, keep_states=True)
    w = Se[:, 1] + St[::-1, 1]  # eta_t(t) + theta_t(T - t)
    load = -(sysm.damping @ w.T).T
    field_vals = None
    if hasattr(sysm, "expand") and hasattr(sysm, "damping_profile"):
        a = sysm.damping_profile
        full = np.stack([sysm.expand(x) for x in w]).reshape(N + 1, -1, 6)
        field_vals = -a[None, :, None] * full
    replay = _Propagator(_Undamped(sysm), T, dt, backend)
    fin, *_ = replay.run(xi0, xi1, forcing=load)
    ef = 0.5 * energy_norm(sysm, fin.u - (problem.target[0] if problem.target is not None else 0),
                           fin.v - (problem.target[1] if problem.target is not None else 0)) ** 2
    return ControlResult(load, field_vals, res, est.estimate, est.decay_bound, ef, e0,
                         (u, v), np.arange(N + 1) * dt)
