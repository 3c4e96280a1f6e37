"""End-to-end acceptance criteria, one test per criterion."""

import time

import numpy as np
import pytest

from crfol import geometry as geo
from crfol import involutivity as inv
from crfol import rh
from crfol import tracer as tr
from crfol.errors import CRFolError, WrongCodimension
from crfol.report import PASS

from . import test_expr
from .conftest import ACCEPTANCE, THETA


def verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def _max_error(pf, trace):
    ref = np.array([pf.expected("main", z) for z in trace.z])
    return float(np.max(np.abs(trace.w - ref)))


def _quarter(pf, steps):
    return tr.trace_leaf(pf.problem, pf.seeds["main"], pf.paths["quarter"], steps)


def test_criterion_1_example1_reproduction(corpus):
    pf = corpus["example1"]
    start = time.perf_counter()
    trace = _quarter(pf, 1000)
    elapsed = time.perf_counter() - start
    np.testing.assert_allclose(trace.z[-1], [0, 1], atol=1e-15)
    ref = np.cos(trace.t) + 1
    err = float(np.max(np.abs(trace.w[:, 0] - ref)))
    verdict(1, err <= 1e-6 and elapsed <= 5, f"max error {err:.2e} (tol 1e-6), runtime {elapsed:.2f} s (limit 5 s)")


def test_criterion_2_example2_reproduction(corpus):
    pf = corpus["example2"]
    trace = _quarter(pf, 1000)
    # independent closed form exp(i theta) (-z1, 1), theta fixed by the seed
    ref = np.exp(1j * THETA) * np.column_stack([-trace.z[:, 0], np.ones(trace.samples)])
    err = float(np.max(np.abs(trace.w - ref)))
    assert _max_error(pf, trace) == pytest.approx(err, abs=1e-15)
    verdict(2, err <= 1e-6, f"max error {err:.2e} (tol 1e-6)")


def test_criterion_3_rk4_order(corpus):
    pf = corpus["example1"]
    errs = [_max_error(pf, _quarter(pf, n)) for n in (250, 500, 1000)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    verdict(3, min(ratios) >= 12, f"errors {', '.join(f'{e:.2e}' for e in errs)}; ratios {ratios[0]:.1f}, {ratios[1]:.1f} (need >= 12)")


def _holonomy(pf, steps):
    try:
        return tr.holonomy(pf.problem, pf.seeds["main"], pf.paths["loop"], steps)
    except CRFolError as exc:
        return exc


def test_criterion_4_holonomy_dichotomy(corpus):
    values = {n: _holonomy(corpus[n], 1000) for n in corpus}
    coarse = _holonomy(corpus["counterexample"], 500)
    ok = values["example1"] <= 1e-6 and values["example2"] <= 1e-6
    ok &= values["counterexample"] >= 0.1 and abs(values["counterexample"] - coarse) <= 1e-6
    agree = {}
    for name, pf in corpus.items():
        seed = tr.prepare_seed(pf.problem, pf.seeds["main"])
        cond = inv.check_condition_I(pf.problem, seed.z, seed.w)
        hol = values[name]
        foliated = not isinstance(hol, Exception) and hol <= 1e-6
        agree[name] = (cond.status == PASS) == foliated
    ok &= all(agree.values())
    shown = ", ".join(f"{n} {v:.2e}" if not isinstance(v, Exception) else f"{n} {type(v).__name__}" for n, v in values.items())
    verdict(4, ok, f"holonomy {shown}; counterexample at 500 steps {coarse:.10f}; condition I agrees on {sum(agree.values())}/4")


def test_criterion_5_null_bundle_dimension(ex1, ex2):
    worst_dim, worst_res = 0, 0.0
    for prob in (ex1, ex2):
        for x in geo.sample_points(prob, 100, np.random.default_rng(11)):
            worst_dim = max(worst_dim, abs(geo.n_dimension(prob, x.z, x.w) - (prob.l - prob.c)))
            b = geo.lift_horizontal(prob, x.z, x.w, np.zeros(prob.l))
            loc = prob.local(x.z, x.w, 1)
            Msys, R = geo.lift_system(prob, loc, geo.vertical_matrix(prob, loc))
            worst_res = max(worst_res, np.linalg.norm(b), np.linalg.norm(Msys @ b))
    verdict(5, worst_dim == 0 and worst_res <= 1e-10, f"max |dim N - 1| = {worst_dim}, homogeneous lift residual {worst_res:.1e}")


def test_criterion_6_degeneracy_detection(ex1, ex2, flat):
    rng = np.random.default_rng(5)
    flat_ok = [geo.fiber_levi_nondegenerate(flat, x.z, x.w)[0] for x in geo.sample_points(flat, 20, rng)]
    good = [geo.fiber_levi_nondegenerate(p, x.z, x.w)[0] for p in (ex1, ex2) for x in geo.sample_points(p, 20, rng)]
    verdict(6, not any(flat_ok) and all(good), f"flat-fiber nondegenerate at {sum(flat_ok)}/20, examples at {sum(good)}/40")


def test_criterion_7_jet_correctness():
    test_expr.test_jet2_matches_finite_differences()
    test_expr.test_jet2_reality_symmetries()
    verdict(7, True, "100 random expressions: jets vs finite differences (rel 1e-6), symmetries (1e-12)")


def test_criterion_8_phi_form(ex1, ex2, two_one, mesh_ex1, mesh_ex2, mesh_two_one):
    rows1, rows2 = mesh_ex1.ok_rows, mesh_ex2.ok_rows
    phi1 = rh.phi_values(ex1, mesh_ex1, (1,)).center
    # conj(a) g with a = w1 - z1 and g = 1
    err1 = np.max(np.abs(phi1 - np.array([np.conj(r.w[0] - r.z[0]) for r in rows1])))
    phi2 = rh.phi_values(ex2, mesh_ex2, (1, 2)).center
    err2 = np.max(np.abs(phi2 - np.array([-np.exp(-1j * THETA) * (1 + abs(r.z[0]) ** 2) for r in rows2])))
    cr = max(
        rh.cr_check(rh.normalize_C(p, m).normalized(p, m, I), p, m)
        for p, m, I in ((ex1, mesh_ex1, (1,)), (ex2, mesh_ex2, (1, 2)))
    )
    l4 = rh.lemma4_residual(two_one, mesh_two_one, (1,), (2,))
    ok = err1 <= 1e-6 and err2 <= 1e-6 and cr <= 1e-6 and l4 <= 1e-3
    verdict(8, ok, f"phi errors {err1:.1e}, {err2:.1e}; normalized cr {cr:.1e}; lemma4 {l4:.1e}")


def test_criterion_9_cr_leaves(ex1, ex2, counter, mesh_ex1, mesh_ex2, mesh_counter):
    r1, r2 = tr.cr_residual(ex1, mesh_ex1), tr.cr_residual(ex2, mesh_ex2)
    rc = tr.cr_residual(counter, mesh_counter)
    verdict(9, r1 <= 1e-3 and r2 <= 1e-3 and rc >= 0.1, f"example1 {r1:.1e}, example2 {r2:.1e}, counterexample {rc:.3f}")


def test_criterion_10_convex_pairing(ex2, mesh_ex2, mesh_k0):
    prob, mesh = mesh_k0
    value = rh.convex_pairing(prob, mesh)
    try:
        rh.convex_pairing(ex2, mesh_ex2)
        raised = False
    except WrongCodimension:
        raised = True
    verdict(10, value >= 0.5 and raised, f"pairing {value:.12f} (exact 1), WrongCodimension on example2: {raised}")
