import numpy as np
import pytest

from crfol import tracer as tr
from crfol.cli import corpus_path
from crfol.expr import Point
from crfol.geometry import Problem
from crfol.problemfile import load

SPHERE = "abs2(z1) + abs2(z2) - 1"
THETA = 0.7


def sphere_problem(q, m=1, d=1, l=2, **kw):
    p = " + ".join(f"abs2(z{i + 1})" for i in range(l)) + " - 1"
    return Problem.from_strings(l, m, 1, d, 2, [p], q, **kw)


@pytest.fixture(scope="session")
def ex1():
    return sphere_problem(["abs2(w1 - z1) - 1"], name="example1")


@pytest.fixture(scope="session")
def ex2():
    return sphere_problem(["abs2(w1) + abs2(w2) - 1 - abs2(z1)", "2*re(w1 + z1*w2)"], m=2, d=2, name="example2")


@pytest.fixture(scope="session")
def counter():
    return sphere_problem(["abs2(w1 - conj(z1)) - 1"], name="counterexample")


@pytest.fixture(scope="session")
def flat():
    return sphere_problem(["re(w1)"], m=2, d=1, name="flat-fiber")


@pytest.fixture(scope="session")
def two_one():
    """An m = 2, d = 1 instance: leaves w = (z1 + a1, a2) with |a| = 1."""
    return sphere_problem(["abs2(w1 - z1) + abs2(w2) - 1"], m=2, d=1, name="two-one")


@pytest.fixture(scope="session")
def corpus():
    return {n: load(corpus_path(f"{n}.prob")) for n in ("example1", "example2", "counterexample", "flat-fiber")}


def ex2_leaf(z, theta=THETA):
    return np.exp(1j * theta) * np.array([-z[0], 1])


MESH_TARGETS = [
    np.array([0.6 * np.exp(0.4j), 0.8 * np.exp(-0.3j)]),
    np.array([0.3j, np.sqrt(0.91)]),
]


def _mesh(prob, seed):
    return tr.foliate(prob, seed, MESH_TARGETS, steps=40, stencil_h=tr.STENCIL_H)


@pytest.fixture(scope="session")
def mesh_ex1(ex1):
    return _mesh(ex1, Point([1, 0], [2]))


@pytest.fixture(scope="session")
def mesh_ex2(ex2):
    return _mesh(ex2, Point([0, 1], ex2_leaf([0, 1])))


@pytest.fixture(scope="session")
def mesh_counter(counter):
    return _mesh(counter, Point([1, 0], [2]))


@pytest.fixture(scope="session")
def mesh_two_one(two_one):
    return _mesh(two_one, Point([1, 0], [1.6, 0.8j]))


@pytest.fixture(scope="session")
def mesh_k0():
    prob = sphere_problem(["abs2(w1) - 1"], name="k0")
    return prob, tr.foliate(prob, Point([1, 0], [1]), MESH_TARGETS, steps=20, stencil_h=tr.STENCIL_H)


# acceptance verdict lines, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
