import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crfol import rh
from crfol import tracer as tr
from crfol.expr import Point
from crfol.errors import MeshTooCoarse, NormalizerVanishes, WrongCodimension

from .conftest import THETA


def test_column_tuples():
    assert rh.column_tuples(3, 2) == [(1, 2), (1, 3), (2, 3)]
    assert rh.column_tuples(2, 2) == [(1, 2)]


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi))
def test_phi_form_example1(ex1, t, s, alpha):
    # on the leaf w = z1 + a the form is conj(a)
    z = np.array([np.cos(t) * np.exp(1j * s), np.sin(t)])
    a = np.exp(1j * alpha)
    assert rh.phi_form(ex1, z, [z[0] + a])[(1,)] == pytest.approx(np.conj(a), abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, np.pi / 2), st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi))
def test_phi_form_example2(ex2, t, s, theta):
    z = np.array([np.cos(t) * np.exp(1j * s), np.sin(t)])
    w = np.exp(1j * theta) * np.array([-z[0], 1])
    expected = -np.exp(-1j * theta) * (1 + abs(z[0]) ** 2)
    assert rh.phi_form(ex2, z, w)[(1, 2)] == pytest.approx(expected, abs=1e-12)


def test_phi_form_two_one(two_one):
    phi = rh.phi_form(two_one, [1, 0], [1.6, 0.8j])
    np.testing.assert_allclose(phi.coeffs, [0.6, -0.8j], atol=1e-14)
    assert phi.max_abs == pytest.approx(0.8)


def test_phi_on_traced_leaves(ex1, ex2, mesh_ex1, mesh_ex2):
    vals = rh.phi_values(ex1, mesh_ex1, (1,))
    np.testing.assert_allclose(vals.center, 1, atol=1e-6)
    vals = rh.phi_values(ex2, mesh_ex2, (1, 2))
    ref = np.array([-np.exp(-1j * THETA) * (1 + abs(r.z[0]) ** 2) for r in mesh_ex2.ok_rows])
    np.testing.assert_allclose(vals.center, ref, atol=1e-6)


def test_normalized_form_is_cr(ex1, ex2, mesh_ex1, mesh_ex2):
    for prob, mesh, I in ((ex1, mesh_ex1, (1,)), (ex2, mesh_ex2, (1, 2))):
        C = rh.normalize_C(prob, mesh)
        assert C.canonical
        assert rh.cr_check(C.normalized(prob, mesh, I), prob, mesh) <= 1e-6


def test_cr_check_distinguishes_holomorphic_from_antiholomorphic(mesh_ex1):
    const = rh.mesh_values(mesh_ex1, lambda z, w: 3.0)
    assert rh.cr_check(const) == 0
    holo = rh.mesh_values(mesh_ex1, lambda z, w: z[0] * z[1])
    assert rh.cr_check(holo) <= 1e-6
    anti = rh.mesh_values(mesh_ex1, lambda z, w: np.conj(z[0]))
    assert rh.cr_check(anti) >= 0.1


def test_cr_check_needs_stencil(ex1):
    mesh = tr.foliate(ex1, Point([1, 0], [2]), [np.array([1, 0])], steps=2)
    with pytest.raises(MeshTooCoarse):
        rh.cr_check(rh.mesh_values(mesh, lambda z, w: w[0]))


def test_lemma4(two_one, mesh_two_one):
    a = rh.lemma4_residual(two_one, mesh_two_one, (1,), (2,))
    b = rh.lemma4_residual(two_one, mesh_two_one, (2,), (1,))
    assert a <= 1e-3
    assert a == pytest.approx(b, abs=1e-15)
    assert rh.lemma4_residual(two_one, mesh_two_one, (1,), (1,)) == 0


def test_normalizer_with_coefficients(two_one, mesh_two_one):
    C = rh.normalize_C(two_one, mesh_two_one, {(1,): "1", (2,): "1"})
    assert not C.canonical
    # C = conj(a1) + conj(a2) with a = (0.6, 0.8i) constant on the leaf
    np.testing.assert_allclose(C.values.center, 0.6 - 0.8j, atol=1e-6)
    assert C.min_abs == pytest.approx(1, abs=1e-6)
    assert rh.cr_check(C.normalized(two_one, mesh_two_one, (2,))) <= 1e-3
    with pytest.raises(ValueError):
        rh.normalize_C(two_one, mesh_two_one)
    with pytest.raises(NormalizerVanishes):
        rh.normalize_C(two_one, mesh_two_one, {(1,): "0", (2,): "0"})


def test_convex_pairing(ex2, mesh_ex2, mesh_k0):
    prob, mesh = mesh_k0
    # w conj(w) = 1 on |w| = 1
    assert rh.convex_pairing(prob, mesh) == pytest.approx(1, abs=1e-10)
    with pytest.raises(WrongCodimension):
        rh.convex_pairing(ex2, mesh_ex2)
