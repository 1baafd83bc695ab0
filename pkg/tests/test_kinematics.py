import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from naghdi import mesh as M
from naghdi.geometry import Surface, sym
from naghdi.kinematics import (DOFS_PER_VERTEX, ShellState, chi0_from_V, differential_operator,
                               multiplier_m, rotation_variable, strain_chi0, strain_operators,
                               strain_phi0, strain_Upsilon, strains)

from conftest import random_clamped_state


def _xy(s):
    return s.mesh.vertices[:, 0], s.mesh.vertices[:, 1]


def test_state_vector_roundtrip(rng):
    x = rng.standard_normal(6 * 7)
    st_ = ShellState.from_vector(x)
    assert np.array_equal(st_.to_vector(), x)
    assert st_.n_vertices == 7
    assert np.allclose((st_ + 2 * st_).to_vector(), 3 * x)


def test_clamped_flag(plate8, rng):
    xi = random_clamped_state(plate8, rng)
    assert xi.is_clamped(plate8.mesh)
    v = xi.to_vector()
    v[DOFS_PER_VERTEX * plate8.mesh.boundary_vertices[0]] = 1.0
    assert not ShellState.from_vector(v).is_clamped(plate8.mesh)


def test_upsilon_flat_w1_only(plate8, rng):
    nv = plate8.mesh.n_vertices
    xi = ShellState(np.zeros((nv, 2)), np.zeros((nv, 2)), rng.standard_normal(nv), np.zeros(nv))
    assert not strain_Upsilon(plate8, xi).any()


def test_upsilon_affine_symmetric_gradient(plate8):
    x, y = _xy(plate8)
    A = np.array([[0.3, -0.7], [1.1, 0.2]])
    W1 = np.column_stack([x, y]) @ A.T
    nv = plate8.mesh.n_vertices
    xi = ShellState(W1, np.zeros((nv, 2)), np.zeros(nv), np.zeros(nv))
    assert np.abs(strain_Upsilon(plate8, xi) - sym(A)).max() < 1e-12


def test_upsilon_cylinder_w1_one():
    err = []
    for n in (6, 12):
        s = Surface(M.cylinder_patch(n))
        nv = s.mesh.n_vertices
        xi = ShellState(np.zeros((nv, 2)), np.zeros((nv, 2)), np.ones(nv), np.zeros(nv))
        U = strain_Upsilon(s, xi)
        x = s.mesh.face_centroids
        t = np.column_stack([-x[:, 1], x[:, 0], 0 * x[:, 0]])
        t /= np.linalg.norm(t, axis=1)[:, None]
        z = np.array([0.0, 0.0, 1.0])
        err.append(max(np.abs(s.face_tensor_along(U, t, t) - 1).max(),
                       np.abs(s.face_tensor_along(U, z, z)).max()))
    assert err[1] < 0.05 and err[1] < err[0]


def test_chi0_flat_is_sym_DW2(plate8, rng):
    xi = random_clamped_state(plate8, rng)
    assert np.abs(strain_chi0(plate8, xi) - sym(plate8.differential(xi.W2))).max() < 1e-14


def test_zero_state_zero_strains(sphere):
    s = strains(sphere, ShellState.zeros(sphere.mesh.n_vertices))
    assert not s.Upsilon.any() and not s.chi0.any() and not s.phi0.any()


def test_chi0_sphere(sphere):
    nv = sphere.mesh.n_vertices
    xi = ShellState(np.zeros((nv, 2)), np.zeros((nv, 2)), np.ones(nv), np.ones(nv))
    assert np.abs(strain_chi0(sphere, xi) - 2 * np.eye(2)).max() < 0.1


def test_phi0_flat_cases(plate8):
    nv = plate8.mesh.n_vertices
    c0 = np.array([0.4, -1.0])
    xi = ShellState(np.zeros((nv, 2)), np.tile(c0, (nv, 1)), np.zeros(nv), np.zeros(nv))
    assert np.abs(strain_phi0(plate8, xi) - c0 / 2).max() < 1e-14
    x, _ = _xy(plate8)
    xi = ShellState(np.zeros((nv, 2)), np.zeros((nv, 2)), x, np.zeros(nv))
    assert np.abs(strain_phi0(plate8, xi) - [0.5, 0.0]).max() < 1e-12


def test_multiplier_m(plate8, rng):
    nv = plate8.mesh.n_vertices
    xi = random_clamped_state(plate8, rng)
    assert not multiplier_m(plate8, xi, np.zeros((nv, 2))).to_vector().any()
    const = ShellState(np.tile([1.0, 2.0], (nv, 1)), np.tile([-1.0, 0.5], (nv, 1)),
                       np.full(nv, 3.0), np.full(nv, -2.0))
    assert np.abs(multiplier_m(plate8, const, rng.standard_normal((nv, 2))).to_vector()).max() < 1e-12
    x, _ = _xy(plate8)
    xi = ShellState(np.zeros((nv, 2)), np.zeros((nv, 2)), x, np.zeros(nv))
    m = multiplier_m(plate8, xi, np.tile([1.0, 0.0], (nv, 1)))
    assert np.abs(m.w1 - 1).max() < 1e-12


@pytest.mark.parametrize("mk", [lambda: M.plate(6), lambda: M.cylinder_patch(5),
                                lambda: M.spherical_cap(4)])
def test_operators_match_direct(mk, rng):
    s = Surface(mk())
    xi = ShellState.from_vector(rng.standard_normal(6 * s.mesh.n_vertices))
    x = xi.to_vector()
    ops = strain_operators(s)
    nf = s.mesh.n_faces
    assert np.abs((ops["Upsilon"] @ x).reshape(nf, 2, 2) - strain_Upsilon(s, xi)).max() < 1e-12
    assert np.abs((ops["chi0"] @ x).reshape(nf, 2, 2) - strain_chi0(s, xi)).max() < 1e-12
    assert np.abs((ops["phi0"] @ x).reshape(nf, 2) - strain_phi0(s, xi)).max() < 1e-12
    assert np.abs((ops["Dw2"] @ x).reshape(nf, 2) - s.gradient(xi.w2)).max() < 1e-12
    assert np.abs(ops["w2"] @ x - s.face_scalar(xi.w2)).max() < 1e-14
    D = differential_operator(s)
    assert np.abs((D @ xi.W1.ravel()).reshape(nf, 2, 2) - s.differential(xi.W1)).max() < 1e-12


def test_chi0_in_rotation_variable_on_plate(plate8, rng):
    # Pi = 0: V = W2 and both forms reduce to sym(DW2)
    xi = random_clamped_state(plate8, rng)
    V = rotation_variable(plate8, xi)
    assert np.array_equal(V, xi.W2)
    alt = chi0_from_V(plate8, xi.W1, V, xi.w1, xi.w2)
    assert np.abs(alt - strain_chi0(plate8, xi)).max() < 1e-14


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
@settings(max_examples=20, deadline=None)
def test_strains_linear(a, b, seed):
    s = Surface(M.spherical_cap(3))
    r = np.random.default_rng(seed)
    n = 6 * s.mesh.n_vertices
    u, v = ShellState.from_vector(r.standard_normal(n)), ShellState.from_vector(r.standard_normal(n))
    lhs = strain_chi0(s, a * u + b * v)
    rhs = a * strain_chi0(s, u) + b * strain_chi0(s, v)
    assert np.abs(lhs - rhs).max() < 1e-10 * (1 + np.abs(rhs).max())
