from types import SimpleNamespace

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from naghdi import mesh as M
from naghdi.forms import (EigenError, MaterialParams, assemble, b_form, coercivity_constant,
                          energy, J_density, korn_forms, korn_lambda, lambda0,
                          smallest_eigenpairs)
from naghdi.geometry import EPS, Surface
from naghdi.kinematics import ShellState

from conftest import random_clamped_state


def test_params_validation():
    p = MaterialParams()
    assert p.beta == pytest.approx(0.75)
    assert p.gamma == pytest.approx(1e-4 / 12)
    for bad in (dict(mu_poisson=0.5), dict(mu_poisson=0.0), dict(h_thickness=0.0),
                dict(E_young=-1.0)):
        with pytest.raises(ValueError):
            MaterialParams(**bad)


def test_b_form_values():
    I = np.eye(2)[None]
    assert b_form(I, I, 0.5)[0] == pytest.approx(4.0)
    assert b_form(EPS[None], EPS[None], 1.0)[0] == pytest.approx(2.0)


@given(arrays(np.float64, (4, 2, 2), elements=st.floats(-5, 5)), st.floats(0, 10))
@settings(max_examples=50, deadline=None)
def test_b_form_nonnegative(T, beta):
    assert (b_form(T, T, beta) >= -1e-12).all()


def test_J_zero_and_w2_case(plate8, rng):
    nv = plate8.mesh.n_vertices
    p = MaterialParams()
    u = random_clamped_state(plate8, rng)
    assert not J_density(plate8, ShellState.zeros(nv), u, p).any()
    w2 = ShellState(np.zeros((nv, 2)), np.zeros((nv, 2)), np.zeros(nv), np.ones(nv))
    p0 = SimpleNamespace(beta=0.0, gamma=1.0 / 12.0)
    J = J_density(plate8, w2, w2, p0)
    assert np.abs(J - 24.0).max() < 1e-12
    assert plate8.integrate(J) == pytest.approx(24.0, rel=1e-12)


def test_J_symmetric(cylinder8, rng, params):
    for _ in range(3):
        a = ShellState.from_vector(rng.standard_normal(6 * cylinder8.mesh.n_vertices))
        b = ShellState.from_vector(rng.standard_normal(6 * cylinder8.mesh.n_vertices))
        ab = J_density(cylinder8, a, b, params)
        ba = J_density(cylinder8, b, a, params)
        assert np.abs(ab - ba).max() < 1e-12 * np.abs(ab).max()


@pytest.mark.parametrize("kind", ["plate", "cylinder", "cap", "annulus"])
def test_stiffness_is_integrated_J(kind, params):
    s = Surface(M.GENERATORS[kind](5))
    sysm = assemble(s, params)
    r = np.random.default_rng(7)
    for _ in range(20):
        xi = random_clamped_state(s, r)
        q = sysm.restrict(xi) @ (sysm.stiffness @ sysm.restrict(xi))
        ref = s.integrate(J_density(s, xi, xi, params))
        assert abs(q - ref) < 1e-10 * abs(ref)


def test_mass_of_hat_matches_p1(plate8, params):
    sysm = assemble(plate8, params)
    m = plate8.mesh
    v = 40
    xi = ShellState.zeros(m.n_vertices)
    w1 = np.zeros(m.n_vertices)
    w1[v] = 1.0
    xi = ShellState(xi.W1, xi.W2, w1, xi.w2)
    x = sysm.restrict(xi)
    ref = m.face_areas[np.any(m.triangles == v, axis=1)].sum() / 6.0
    assert x @ (sysm.mass @ x) == pytest.approx(ref, rel=1e-13)


def test_zero_damping_operator(plate8_system):
    assert plate8_system.damping.nnz == 0 or not plate8_system.damping.data.any()


def test_restrict_expand(plate8_system, rng):
    xi = random_clamped_state(plate8_system.surface, rng)
    x = plate8_system.restrict(xi)
    assert np.array_equal(plate8_system.expand(x), xi.to_vector())


def test_all_clamped_rejected(params):
    with pytest.raises(ValueError, match="clamped"):
        assemble(Surface(M.plate(1)), params)


def test_bad_damping_profile(plate8, params):
    with pytest.raises(ValueError):
        assemble(plate8, params, -np.ones(plate8.mesh.n_vertices))
    with pytest.raises(ValueError):
        assemble(plate8, params, np.ones(3))


def test_energy_cases(plate8_system, rng):
    n = plate8_system.n_dofs
    assert energy(plate8_system, np.zeros(n), np.zeros(n)) == 0.0
    v = rng.standard_normal(n)
    assert energy(plate8_system, np.zeros(n), v) == pytest.approx(0.5 * v @ (plate8_system.mass @ v))
    ev = smallest_eigenpairs(plate8_system.stiffness, plate8_system.mass, k=2)
    phi = ev.vectors[:, 1]
    assert energy(plate8_system, phi, np.zeros(n)) == pytest.approx(ev.values[1] / 2, rel=1e-9)


def test_eigenpairs_match_dense(plate8_system):
    A, B = plate8_system.stiffness, plate8_system.mass
    ev = smallest_eigenpairs(A, B, k=4)
    ref = sla.eigh(A.toarray(), B.toarray(), eigvals_only=True, subset_by_index=[0, 3])
    assert np.allclose(ev.values, ref, rtol=1e-9)
    assert ev.residual < 1e-8


def test_eigen_backends_agree(plate8_system):
    A, B = plate8_system.stiffness, plate8_system.mass
    a = smallest_eigenpairs(A, B, k=2, backend="python").values
    b = smallest_eigenpairs(A, B, k=2, backend="compiled").values
    assert np.allclose(a, b, rtol=1e-10)


def test_eigen_nonconvergence_reported(params):
    f = korn_forms(Surface(M.plate(12)), params.beta)
    with pytest.raises(EigenError, match="did not converge"):
        smallest_eigenpairs(f.korn, f.h1, k=20, maxiter=1, tol=1e-14)


def test_coercivity_positive(plate8_system):
    assert coercivity_constant(plate8_system) > 0


def test_korn_hat_rayleigh_quotient(params):
    # hand evaluation for W = (phi, 0): |DW + D*W|^2 = 4 phi_x^2 + 2 phi_y^2
    s = Surface(M.plate(4))
    f = korn_forms(s, params.beta)
    m = s.mesh
    v = 12
    W = np.zeros((m.n_vertices, 2))
    W[v, 0] = 1.0
    x = W.ravel()[f.free]
    hat = np.zeros(m.n_vertices)
    hat[v] = 1.0
    g = s.gradient(hat)
    ref = s.integrate(4 * g[:, 0] ** 2 + 2 * g[:, 1] ** 2)
    assert x @ (f.korn @ x) == pytest.approx(ref, rel=1e-12)


def test_korn_lambda_matches_dense(params):
    s = Surface(M.plate(8))
    f = korn_forms(s, params.beta)
    ref = sla.eigh(f.korn.toarray(), f.h1.toarray(), eigvals_only=True)[0]
    assert korn_lambda(s, params.beta) == pytest.approx(ref, rel=1e-8)


def test_lambda0_bound_random_fields(plate8, params):
    lam = lambda0(plate8, params.beta)
    f = korn_forms(plate8, params.beta)
    r = np.random.default_rng(3)
    for _ in range(50):
        w = r.standard_normal(len(f.free))
        assert lam.value * (w @ (f.b_plus_mass @ w)) / (w @ (f.grad @ w)) >= 1.0
    assert lam.value >= 1.0 and lam.certificate >= 0 and lam.factor_certified
