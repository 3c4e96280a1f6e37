"""Verification of the phi-form, its CR normalization and the convexity pairing on traced graphs."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import expr as ex
from .errors import MeshTooCoarse, NormalizerVanishes, WrongCodimension
from .tracer import Foliation, _require_stencil, wirtinger_sbar

VANISH_TOL = 1e-10


@dataclass
class PhiForm:
    """Coefficients of the d-form built from the d x m matrix dq/dw, one per column tuple."""

    tuples: list
    coeffs: np.ndarray

    def __getitem__(self, idx):
        return self.coeffs[self.tuples.index(tuple(idx))]

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coeffs)))


def column_tuples(m: int, d: int) -> list:
    """Increasing d-tuples of 1-based column indices."""
    return [tuple(i + 1 for i in c) for c in combinations(range(m), d)]


def phi_form(prob, z, w) -> PhiForm:
    _, dg = prob.q_jets(np.asarray(z, complex), np.asarray(w, complex))
    dqw = dg[:, prob.l : prob.l + prob.m]
    tuples = column_tuples(prob.m, prob.d)
    coeffs = np.array([np.linalg.det(dqw[:, [i - 1 for i in t]]) for t in tuples])
    return PhiForm(tuples, coeffs)


# --------------------------------------------------------------------------
# values on a traced mesh


@dataclass
class MeshValues:
    """A complex scalar at every row centre and stencil point of a traced mesh."""

    center: np.ndarray  # (rows,)
    stencil: np.ndarray | None  # (rows, k, 4)
    h: float | None

    def __truediv__(self, other: "MeshValues") -> "MeshValues":
        sten = None if self.stencil is None else self.stencil / other.stencil
        return MeshValues(self.center / other.center, sten, self.h)

    def __mul__(self, other: "MeshValues") -> "MeshValues":
        sten = None if self.stencil is None else self.stencil * other.stencil
        return MeshValues(self.center * other.center, sten, self.h)

    def min_abs(self) -> float:
        vals = [np.abs(self.center)]
        if self.stencil is not None:
            vals.append(np.abs(self.stencil).ravel())
        return float(np.min(np.concatenate(vals)))


def mesh_values(mesh: Foliation, fn) -> MeshValues:
    """Evaluate ``fn(z, w)`` at every usable row and its stencil points."""
    rows = mesh.ok_rows
    center = np.array([fn(r.z, r.w) for r in rows], dtype=complex)
    if mesh.h is None:
        return MeshValues(center, None, None)
    stencil = np.array(
        [[[fn(r.stencil_z[j, i], r.stencil_w[j, i]) for i in range(4)] for j in range(r.stencil_z.shape[0])]
         for r in rows],
        dtype=complex,
    )
    return MeshValues(center, stencil, mesh.h)


def phi_values(prob, mesh: Foliation, I) -> MeshValues:
    return mesh_values(mesh, lambda z, w: phi_form(prob, z, w)[I])


def _sbar(values: MeshValues) -> np.ndarray:
    """s-bar derivatives, shape (rows, k)."""
    if values.stencil is None or values.h is None:
        raise MeshTooCoarse("values carry no stencil")
    return wirtinger_sbar(np.moveaxis(values.stencil, -1, 0), values.h)


def cr_check(values: MeshValues, prob=None, mesh: Foliation | None = None) -> float:
    """Max |s-bar derivative| of mesh values over rows and horizontal directions."""
    if mesh is not None:
        _require_stencil(mesh)
    d = _sbar(values)
    return float(np.max(np.abs(d))) if d.size else 0.0


def lemma4_residual(prob, mesh: Foliation, I, J) -> float:
    """Max of |phi_I sbar(phi_J) - phi_J sbar(phi_I)| along the traced graph."""
    _require_stencil(mesh)
    pi, pj = phi_values(prob, mesh, I), phi_values(prob, mesh, J)
    res = pi.center[:, None] * _sbar(pj) - pj.center[:, None] * _sbar(pi)
    return float(np.max(np.abs(res))) if res.size else 0.0


# --------------------------------------------------------------------------
# normalizer


@dataclass
class Normalizer:
    """Values of C = sum_I h_I phi_I on the graph, and the h used."""

    values: MeshValues
    h: dict
    canonical: bool

    @property
    def min_abs(self) -> float:
        return self.values.min_abs()

    def normalized(self, prob, mesh: Foliation, I) -> MeshValues:
        """(1/C) phi_I on the mesh."""
        return phi_values(prob, mesh, I) / self.values


def _as_expr(prob, h):
    if isinstance(h, str):
        return ex.parse(h, (prob.l, prob.m))
    return h


def normalize_C(prob, mesh: Foliation, h: dict | None = None) -> Normalizer:
    """C = sum_I h_I(z, f(z)) phi_I(z, f(z)); with d = m the single minor is used (h = 1).

    ``h`` maps column tuples to expressions (text or parsed) in z and w.
    """
    tuples = column_tuples(prob.m, prob.d)
    if prob.d == prob.m:
        hx = {tuples[0]: ex.lit(1)}
        canonical = True
    else:
        if not h:
            raise ValueError("a normalizer needs h_I expressions when d < m")
        hx = {tuple(k): _as_expr(prob, v) for k, v in h.items()}
        canonical = False

    def C(z, w):
        phi = phi_form(prob, z, w)
        pt = ex.Point(z, w)
        return sum(ex.evaluate(e, pt) * phi[I] for I, e in hx.items())

    values = mesh_values(mesh, C)
    low = values.min_abs()
    if low < VANISH_TOL:
        raise NormalizerVanishes(f"|C| drops to {low:.3g} on the mesh")
    return Normalizer(values, {k: ex.to_text(v) for k, v in hx.items()}, canonical)


def convex_pairing(prob, mesh: Foliation) -> float:
    """min over rows of |sum_i f_i dq/dw_i| on the traced graph (codimension d = 1 only)."""
    if prob.d != 1:
        raise WrongCodimension(f"the pairing needs d = 1, got d = {prob.d}")
    vals = []
    for r in mesh.ok_rows:
        _, dg = prob.q_jets(r.z, r.w)
        vals.append(abs(np.sum(r.w * dg[0, prob.l :])))
    if not vals:
        raise MeshTooCoarse("no usable rows in the mesh")
    return float(min(vals))
