import numpy as np
import pytest
import scipy.linalg as sla

from naghdi import mesh as M
from naghdi.dynamics import (EnergyTrace, Motion, SimConfig, SolverError, decay_fit,
                             des_b_certificate, e_density, energy_balance_check, energy_drift,
                             initial_motion, simulate, staircase_ok, step,
                             virial_identity_check)
from naghdi.escape import check_escape, radial_field
from naghdi.forms import assemble, smallest_eigenpairs
from naghdi.geometry import Surface
from naghdi.kinematics import ShellState

from conftest import random_clamped_state


def _lowmode(system, k=4):
    ev = smallest_eigenpairs(system.stiffness, system.mass, k=k)
    return ev.vectors @ (0.5 ** np.arange(k))


def _cn_propagator(system, dt):
    """Dense trapezoidal propagator of (u, v) for M u'' + C u' + K u = 0."""
    Mi = np.linalg.inv(system.mass.toarray())
    n = system.n_dofs
    A = np.block([[np.zeros((n, n)), np.eye(n)],
                  [-Mi @ system.stiffness.toarray(), -Mi @ system.damping.toarray()]])
    I = np.eye(2 * n)
    return np.linalg.solve(I - 0.5 * dt * A, I + 0.5 * dt * A)


def test_config_validation():
    for bad in (dict(dt=0), dict(dt=0.1, t_end=0.01), dict(sample_stride=0),
                dict(newmark_beta=0.1), dict(solver="lu")):
        with pytest.raises(ValueError):
            SimConfig(**bad)
    with pytest.raises(ValueError, match="multiple"):
        SimConfig(dt=0.3, t_end=1.0).n_steps


def test_zero_state_stays_zero(plate8_system):
    n = plate8_system.n_dofs
    m = step(plate8_system, Motion(np.zeros(n), np.zeros(n), np.zeros(n)), 1e-2)
    assert not (m.u.any() or m.v.any() or m.a.any())


def test_eigenmode_discrete_period(plate8_system):
    ev = smallest_eigenpairs(plate8_system.stiffness, plate8_system.mass, k=1)
    phi, lam = ev.vectors[:, 0], ev.values[0]
    dt = 0.05
    tr, _ = simulate(plate8_system, (phi, 0 * phi), SimConfig(dt=dt, t_end=2.0), keep_states=True)
    # average acceleration: u_n = cos(n Omega dt) phi, tan(Omega dt / 2) = omega dt / 2
    Om = 2.0 * np.arctan(0.5 * np.sqrt(lam) * dt) / dt
    n = np.arange(len(tr.times))
    amp = tr.states[:, 0] @ (plate8_system.mass @ phi)
    assert np.abs(amp - np.cos(n * Om * dt)).max() < 1e-8
    off = tr.states[:, 0] - np.outer(amp, phi)
    assert np.abs(off).max() < 1e-8


@pytest.mark.parametrize("backend", ["compiled", "python"])
def test_six_dof_dense_oracle(params, backend):
    s = Surface(M.plate(2))
    sysm = assemble(s, params, np.full(s.mesh.n_vertices, 1.5))
    assert sysm.n_dofs == 6
    r = np.random.default_rng(5)
    u0, v0 = r.standard_normal(6), r.standard_normal(6)
    dt, T = 0.01, 0.5
    tr, fin = simulate(sysm, (u0, v0), SimConfig(dt=dt, t_end=T), backend=backend)
    y = np.linalg.matrix_power(_cn_propagator(sysm, dt), 50) @ np.r_[u0, v0]
    assert np.abs(np.r_[fin.u, fin.v] - y).max() < 1e-10 * np.abs(y).max()


def test_conservation_and_balance_undamped(plate8_system):
    u0 = _lowmode(plate8_system)
    tr, _ = simulate(plate8_system, (u0, 0 * u0), SimConfig(dt=1e-2, t_end=5.0))
    assert energy_drift(tr) < 1e-9
    assert energy_balance_check(tr) < 1e-9


def test_uniform_damping_strictly_decreasing(plate8, params):
    sysm = assemble(plate8, params, np.full(plate8.mesh.n_vertices, 0.5))
    r = np.random.default_rng(0)
    v0 = r.standard_normal(sysm.n_dofs)
    tr, _ = simulate(sysm, (np.zeros(sysm.n_dofs), v0), SimConfig(dt=1e-2, t_end=1.0))
    assert (np.diff(tr.energies) < 0).all()


def test_one_step_velocity_free(plate8, params):
    sysm = assemble(plate8, params, np.full(plate8.mesh.n_vertices, 1.0))
    u0 = _lowmode(sysm)
    dt = 1e-2
    tr, fin = simulate(sysm, (u0, 0 * u0), SimConfig(dt=dt, t_end=dt), keep_states=True)
    # the scheme's own balance uses the midpoint velocity and closes to roundoff
    vm = 0.5 * (tr.states[0, 1] + tr.states[1, 1])
    mid = tr.energies[1] - tr.energies[0] + dt * vm @ (sysm.damping @ vm)
    assert abs(mid) < 1e-13 * tr.energies[0]
    # the trapezoid ledger differs by exactly dt/4 v1^T C v1
    v1 = fin.v
    defect = 0.25 * dt * v1 @ (sysm.damping @ v1) / tr.energies[0]
    assert energy_balance_check(tr) == pytest.approx(defect, rel=1e-8)


def test_cg_matches_direct(plate8, params):
    sysm = assemble(plate8, params, np.full(plate8.mesh.n_vertices, 1.0))
    u0 = _lowmode(sysm)
    a, fa = simulate(sysm, (u0, 0 * u0), SimConfig(dt=1e-2, t_end=0.5))
    b, fb = simulate(sysm, (u0, 0 * u0), SimConfig(dt=1e-2, t_end=0.5, solver="cg",
                                                   solver_tol=1e-13))
    assert np.abs(fa.u - fb.u).max() < 1e-9 * np.abs(fa.u).max()
    assert np.allclose(a.energies, b.energies, rtol=1e-9)


def test_cg_failure_reported(plate8_system):
    u0 = _lowmode(plate8_system)
    m = initial_motion(plate8_system, u0, 0 * u0)
    with pytest.raises(SolverError):
        step(plate8_system, m, 1e-2, SimConfig(dt=1e-2, t_end=1e-2, solver_tol=1e-12,
                                                 solver_maxiter=2))


def test_backends_agree(plate8, params):
    sysm = assemble(plate8, params, np.full(plate8.mesh.n_vertices, 0.7))
    u0 = _lowmode(sysm)
    f = np.zeros((51, sysm.n_dofs))
    f[:, 0] = np.sin(np.arange(51) * 0.1)
    out = [simulate(sysm, (u0, 0 * u0), SimConfig(dt=1e-2, t_end=0.5, sample_stride=7),
                    forcing=f, keep_states=True, backend=b) for b in ("compiled", "python")]
    (ta, ma), (tb, mb) = out
    assert np.array_equal(ta.times, tb.times)
    assert np.allclose(ta.energies, tb.energies, rtol=1e-11)
    assert np.allclose(ta.dissipation, tb.dissipation, rtol=1e-10, atol=1e-15)
    assert np.allclose(ta.states, tb.states, rtol=1e-10, atol=1e-13)
    assert np.allclose(ma.u, mb.u, rtol=1e-10, atol=1e-13)


def test_forcing_shape_checked(plate8_system):
    u0 = _lowmode(plate8_system)
    with pytest.raises(ValueError, match="forcing"):
        simulate(plate8_system, (u0, 0 * u0), SimConfig(dt=1e-2, t_end=0.1),
                 forcing=np.zeros((3, plate8_system.n_dofs)))


def test_state_input_accepted(plate8_system, rng):
    xi = random_clamped_state(plate8_system.surface, rng)
    m = initial_motion(plate8_system, xi, ShellState.zeros(xi.n_vertices))
    assert np.array_equal(m.u, plate8_system.restrict(xi))


# --- decay fits ------------------------------------------------------------------------

def test_decay_fit_exact_exponential():
    t = np.linspace(0, 10, 201)
    tr = EnergyTrace(t, 5 * np.exp(-0.3 * t), None)
    c1, c2, r2 = decay_fit(tr, envelope=False)
    assert abs(c1 * 5 - 5) < 1e-10 and abs(c2 - 0.3) < 1e-10 and abs(r2 - 1) < 1e-10


def test_decay_fit_staircase():
    T, g = 0.7, 0.6
    t = np.arange(0, 30) * T
    tr = EnergyTrace(t, g ** np.arange(30), None)
    _, c2, _ = decay_fit(tr, window=(0, t[-1]), envelope=False)
    assert c2 == pytest.approx(np.log(1 / g) / T, rel=1e-10)
    assert staircase_ok(tr, T)
    bad = EnergyTrace(t, np.r_[1.0, 2.0, g ** np.arange(2, 30)], None)
    assert not staircase_ok(bad, T)


def test_decay_fit_conservative(plate8_system):
    u0 = _lowmode(plate8_system)
    tr, _ = simulate(plate8_system, (u0, 0 * u0), SimConfig(dt=1e-2, t_end=10.0))
    assert decay_fit(tr)[1] < 1e-6


def test_decay_fit_rejects_short_window():
    with pytest.raises(ValueError):
        decay_fit(EnergyTrace(np.array([0.0, 1.0]), np.array([1.0, 0.5]), None),
                  window=(0.5, 0.6))


# --- virial identity -----------------------------------------------------------------------

def test_virial_p_zero(plate8_system):
    u0 = _lowmode(plate8_system)
    tr, _ = simulate(plate8_system, (u0, 0 * u0), SimConfig(dt=1e-2, t_end=0.2), keep_states=True)
    assert virial_identity_check(plate8_system, tr, 0.0) == 0.0
    with pytest.raises(ValueError):
        virial_identity_check(plate8_system, simulate(plate8_system, (u0, 0 * u0),
                                                      SimConfig(dt=1e-2, t_end=0.2))[0], 1.0)


def test_virial_eigenmode_baseline(plate10, params):
    sysm = assemble(plate10, params)
    ev = smallest_eigenpairs(sysm.stiffness, sysm.mass, k=1)
    phi = ev.vectors[:, 0]
    period = 2 * np.pi / np.sqrt(ev.values[0])
    dt = period / 400
    tr, _ = simulate(sysm, (phi, 0 * phi), SimConfig(dt=dt, t_end=400 * dt), keep_states=True)
    assert virial_identity_check(sysm, tr, 1.0) < 1e-6


# --- multiplier densities -------------------------------------------------------------------

def test_e_density_zero_field(plate8, rng, params):
    xi = random_clamped_state(plate8, rng)
    assert not e_density(plate8, xi, np.zeros((plate8.mesh.n_vertices, 2)), params.beta).any()


def test_e_density_radial_w1_only(plate8, rng, params):
    # isotropic DV: G(V, DW) = S(W) so the W1 term is 2 b(S, S)
    nv = plate8.mesh.n_vertices
    xi = random_clamped_state(plate8, rng)
    xi = ShellState(xi.W1, np.zeros((nv, 2)), np.zeros(nv), np.zeros(nv))
    V = radial_field(plate8, (0.5, 0.5, 0))
    S = 0.5 * (plate8.differential(xi.W1) + np.swapaxes(plate8.differential(xi.W1), 1, 2))
    from naghdi.forms import b_form
    assert np.allclose(e_density(plate8, xi, V, params.beta), 2 * b_form(S, S, params.beta),
                       atol=1e-12)


def test_des_b_radial_zero(plate8, params):
    V = radial_field(plate8, (0.5, 0.5, 0))
    cert = check_escape(plate8, V, 2.0, params.beta)
    out = des_b_certificate(plate8, V, params.beta, certificate=cert)
    assert out["C_lo"] == 0.0 and out["sigma1"] == pytest.approx(1.0)


def test_des_b_needs_certificate(plate8, params):
    with pytest.raises(ValueError):
        des_b_certificate(plate8, radial_field(plate8, (0.5, 0.5, 0)), params.beta)


def conformal_field(surface, c=5.0):
    x, y = surface.mesh.vertices[:, 0] + c, surface.mesh.vertices[:, 1]
    return np.column_stack([x * x - y * y, 2 * x * y]) / (2 * c)


def test_des_b_nonradial_bounded(params):
    vals = []
    for n in (6, 12):
        s = Surface(M.plate(n))
        V = conformal_field(s)
        cert = check_escape(s, V, 2.0, params.beta)
        assert cert["pass"]
        vals.append(des_b_certificate(s, V, params.beta, certificate=cert)["C_lo"])
        assert 0 < cert["margin"] and des_b_certificate(s, V, params.beta,
                                                         certificate=cert)["sigma1"] < 1
    # conformal DV gives b(S, G(V, DW)) = v b(S, S): only the residual can
    # make C_lo positive, and it shrinks with h
    assert np.isfinite(vals).all() and min(vals) >= 0
    assert vals[1] <= vals[0]
