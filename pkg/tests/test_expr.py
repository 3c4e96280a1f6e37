import cmath

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crfol import expr as ex
from crfol.errors import DivisionNearZero, ExpressionSyntaxError, NotRealValued, UnknownVariable

L, M = 2, 1
VARS = ["z1", "z2", "w1"]


# --------------------------------------------------------------------------
# random rational real expressions


def _leaves():
    nums = st.sampled_from(["0.5", "1", "2", "1.5", "i", "0.25"])
    var = st.sampled_from(VARS)
    conj_var = var.map(lambda v: f"conj({v})")
    return st.one_of(nums, var, conj_var)


def _extend(children):
    pair = st.tuples(children, children)
    return st.one_of(
        pair.map(lambda ab: f"({ab[0]} + {ab[1]})"),
        pair.map(lambda ab: f"({ab[0]} - {ab[1]})"),
        pair.map(lambda ab: f"({ab[0]} * {ab[1]})"),
        pair.map(lambda ab: f"({ab[0]}) / (1 + abs2({ab[1]}))"),
        st.tuples(children, st.integers(1, 3)).map(lambda a: f"({a[0]})^{a[1]}"),
        children.map(lambda a: f"conj({a})"),
        children.map(lambda a: f"-{a}" if not a.startswith("-") else a),
    )


complex_texts = st.recursive(_leaves(), _extend, max_leaves=8)
real_texts = st.tuples(st.sampled_from(["re", "im", "abs2"]), complex_texts).map(lambda t: f"{t[0]}({t[1]})")
coords = st.floats(-1.2, 1.2, allow_nan=False, allow_infinity=False)
points = st.tuples(*[coords] * (2 * (L + M))).map(
    lambda v: ex.Point([complex(v[0], v[1]), complex(v[2], v[3])], [complex(v[4], v[5])])
)


def _value(e, zeta):
    return ex.evaluate(e, ex.Point(zeta[:L], zeta[L:]))


def _fd_wirtinger(f, zeta, h, bar=False):
    """d/dzeta_k (or d/dconj(zeta_k)) of f by central differences: (f_x -+ i f_y) / 2."""
    out = np.zeros(zeta.size, complex)
    for k in range(zeta.size):
        e = np.zeros(zeta.size, complex)
        e[k] = h
        fx = (f(zeta + e) - f(zeta - e)) / (2 * h)
        fy = (f(zeta + 1j * e) - f(zeta - 1j * e)) / (2 * h)
        out[k] = (fx + 1j * fy) / 2 if bar else (fx - 1j * fy) / 2
    return out


def _fd_mixed(f, zeta, h):
    """H[s, i] = d^2 f / d conj(zeta_s) d zeta_i by nested central differences."""
    n = zeta.size
    H = np.zeros((n, n), complex)
    for s in range(n):
        e = np.zeros(n, complex)
        e[s] = h
        gx = (_fd_wirtinger(f, zeta + e, h) - _fd_wirtinger(f, zeta - e, h)) / (2 * h)
        gy = (_fd_wirtinger(f, zeta + 1j * e, h) - _fd_wirtinger(f, zeta - 1j * e, h)) / (2 * h)
        H[s] = (gx + 1j * gy) / 2
    return H


def _close(a, b, rel):
    a, b = np.asarray(a), np.asarray(b)
    return np.linalg.norm(a - b) <= rel * max(1.0, np.linalg.norm(b))


@settings(max_examples=100, deadline=None)
@given(real_texts, points)
def test_jet2_matches_finite_differences(text, x):
    e = ex.parse(text, (L, M))
    try:
        j = ex.jet2(e, x)
    except DivisionNearZero:
        return
    f = lambda zeta: _value(e, zeta)  # noqa: E731
    zeta = x.zeta
    assert abs(j.value - f(zeta).real) <= 1e-12 * max(1, abs(j.value))
    grad = _fd_wirtinger(f, zeta, 1e-5)
    assert _close(np.concatenate([j.dz, j.dw]), grad, 1e-6)
    H = _fd_mixed(f, zeta, 1e-4)
    assert _close(j.h_zbar_z, H[:L, :L], 1e-6)
    assert _close(j.h_zbar_w, H[:L, L:], 1e-6)
    assert _close(j.h_wbar_z, H[L:, :L], 1e-6)
    assert _close(j.h_wbar_w, H[L:, L:], 1e-6)
    # antiholomorphic derivatives are conjugates of the holomorphic ones for real functions
    gbar = _fd_wirtinger(f, zeta, 1e-5, bar=True)
    assert _close(np.concatenate([j.dzbar, j.dwbar]), gbar, 1e-6)


@settings(max_examples=100, deadline=None)
@given(real_texts, points)
def test_jet2_reality_symmetries(text, x):
    e = ex.parse(text, (L, M))
    try:
        j = ex.jet2(e, x)
    except DivisionNearZero:
        return
    scale = max(1.0, np.max(np.abs(j.h_zbar_w)), np.max(np.abs(j.h_zbar_z)))
    assert np.max(np.abs(j.h_wbar_z - j.h_zbar_w.conj().T)) <= 1e-12 * scale
    assert np.max(np.abs(j.h_zbar_z - j.h_zbar_z.conj().T)) <= 1e-12 * scale
    assert np.max(np.abs(j.h_wbar_w - j.h_wbar_w.conj().T)) <= 1e-12 * max(1.0, np.max(np.abs(j.h_wbar_w)))


@settings(max_examples=100, deadline=None)
@given(complex_texts)
def test_print_parse_round_trip(text):
    e = ex.parse(text, (L, M))
    again = ex.parse(ex.to_text(e), (L, M))
    assert again == e
    assert ex.parse(ex.to_text(again), (L, M)) == again


@settings(max_examples=60, deadline=None)
@given(complex_texts, points)
def test_compiled_kernel_agrees_with_tree_walk(text, x):
    e = ex.parse(text, (L, M))
    try:
        direct = ex.evaluate(e, x)
        vals, _, _ = ex.JetKernel((e,), ex.problem_slots(L, M), order=1)(x.zeta)
    except DivisionNearZero:
        return
    assert abs(vals[0] - direct) <= 1e-12 * max(1, abs(direct))


# --------------------------------------------------------------------------
# parsing


def test_parse_sphere_is_desugared_sum():
    e = ex.parse("z1*conj(z1)+z2*conj(z2)-1", (2, 0))
    assert e == ex.parse("abs2(z1) + abs2(z2) - 1", (2, 0))
    assert ex.variables(e) == {("z", 1), ("z", 2)}
    assert ex.evaluate(e, ex.Point([0.6, 0.8j], [])) == pytest.approx(0)


def test_parse_single_variable():
    assert ex.parse("w1", (0, 1)) == ex.Var("w", 1)


def test_out_of_range_variable():
    with pytest.raises(UnknownVariable):
        ex.parse("z3", (2, 1))


@pytest.mark.parametrize("text", ["", "z1 +", "(z1", "z1 ^ 1.5", "z1 ** 2", "foo(z1)", "z1 $ 2"])
def test_syntax_errors(text):
    with pytest.raises((ExpressionSyntaxError, UnknownVariable)):
        ex.parse(text, (2, 1))


def test_syntax_error_reports_position():
    with pytest.raises(ExpressionSyntaxError) as info:
        ex.parse("z1 + * z2", (2, 1))
    assert info.value.position == 5


def test_t_only_in_paths():
    with pytest.raises(UnknownVariable):
        ex.parse("t + z1", (2, 1))
    assert ex.parse("cos(t)", allow_t=True) == ex.call("cos", ex.Var("t", 0))


def test_unary_minus_binds_to_atom():
    e = ex.parse("-z1^2", (1, 0))
    assert ex.evaluate(e, ex.Point([2], [])) == 4


def test_normal_form_has_only_core_nodes():
    e = ex.parse("re(z1*w1) + im(conj(w1)) - abs2(z1 - 2)", (1, 1))
    allowed = (ex.Lit, ex.Var, ex.Conj, ex.Add, ex.Sub, ex.Mul, ex.Div, ex.Pow)

    def walk(node):
        assert isinstance(node, allowed)
        for child in getattr(node, "__dict__", {}).values():
            if isinstance(child, allowed + (ex.Call,)):
                walk(child)
        if isinstance(node, ex.Conj):
            assert isinstance(node.arg, ex.Var)

    walk(e)


def test_literal_folding():
    assert ex.parse("2*3 - 1", (0, 0)) == ex.Lit(5 + 0j)


# --------------------------------------------------------------------------
# evaluation


def test_evaluate_examples():
    sphere = ex.parse("abs2(z1) + abs2(z2) - 1", (2, 1))
    assert ex.evaluate(sphere, ex.Point([1, 0], [0])) == 0
    circle = ex.parse("(w1-z1)*conj(w1-z1)-1", (2, 1))
    assert ex.evaluate(circle, ex.Point([0, 1], [1])) == 0
    assert ex.evaluate(ex.parse("conj(z1)", (1, 0)), ex.Point([2 + 1j], [])) == 2 - 1j


def test_division_near_zero():
    e = ex.parse("1 / z1", (1, 0))
    with pytest.raises(DivisionNearZero):
        ex.evaluate(e, ex.Point([0], []))
    with pytest.raises(DivisionNearZero):
        ex.jet2(ex.parse("re(1 / z1)", (1, 0)), ex.Point([0], []))


def test_transcendental_extensions():
    e = ex.parse("exp(i*pi) + cos(0) + sin(0)", (0, 0))
    assert ex.evaluate(e) == pytest.approx(cmath.exp(1j * cmath.pi) + 1)


# --------------------------------------------------------------------------
# jets


def test_jet2_abs2_w():
    j = ex.jet2(ex.parse("w1*conj(w1)", (0, 1)), ex.Point([], [2 + 1j]))
    assert j.value == pytest.approx(5)
    assert j.dw == pytest.approx([2 - 1j])
    assert j.h_wbar_w == pytest.approx(np.array([[1]]))
    assert j.dz.size == 0 and j.h_zbar_w.size == 0


def test_jet2_circle_fiber():
    j = ex.jet2(ex.parse("(w1-z1)*conj(w1-z1)-1", (2, 1)), ex.Point([0, 1], [1]))
    assert j.value == pytest.approx(0)
    np.testing.assert_allclose(j.dz, [-1, 0], atol=1e-15)
    np.testing.assert_allclose(j.dw, [1], atol=1e-15)
    np.testing.assert_allclose(j.h_zbar_w, [[-1], [0]], atol=1e-15)
    np.testing.assert_allclose(j.h_wbar_w, [[1]], atol=1e-15)
    np.testing.assert_allclose(j.h_zbar_z, [[1, 0], [0, 0]], atol=1e-15)


def test_jet2_rejects_complex_values():
    with pytest.raises(NotRealValued):
        ex.jet2(ex.parse("z1", (1, 0)), ex.Point([1j], []))


def test_path_jets():
    vals, d = ex.path_jets(ex.parse_tuple("(cos(t), t^2)", allow_t=True), 0.5)
    np.testing.assert_allclose(vals, [np.cos(0.5), 0.25])
    np.testing.assert_allclose(d, [-np.sin(0.5), 1.0])
