"""Pointwise linear algebra on S and M: tangent bases, lifts and projections.

Conventions used throughout the package:

* A point of C^n is a complex vector ``zeta``; its real coordinates are
  ``(Re zeta, Im zeta)``.  A real tangent vector is stored as the complex
  displacement ``delta`` with the same convention.
* A complex vector field ``A d/dzeta + B d/dzeta-bar`` is stored as the
  concatenation ``[A, B]`` of length ``2n``.
* ``<ddbar q, X ^ conj(Y)>`` for (1,0) vectors X, Y is computed as
  ``conj(Y) @ Hq @ X`` with ``Hq[sigma, i] = d^2 q / d conj(zeta_sigma) d zeta_i``;
  the overall sign is irrelevant for the homogeneous conditions it enters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import expr as ex
from .errors import (
    CRFolError,
    Inconsistent,
    NDimensionDefect,
    NewtonDiverged,
    NotHorizontal,
    RankDefect,
)

RANK_TOL = 1e-8
ON_TOL = 1e-8
PROJ_TOL = 1e-12
NEWTON_CAP = 50


class OffManifold(CRFolError, ValueError):
    pass


@dataclass(frozen=True)
class Problem:
    """Dimensions and defining functions of S in C^l and M in S x C^m."""

    l: int
    m: int
    c: int
    d: int
    tau: int
    p: tuple
    q: tuple
    name: str = ""
    rank_tol: float = RANK_TOL
    on_tol: float = ON_TOL
    proj_tol: float = PROJ_TOL
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(self.p))
        object.__setattr__(self, "q", tuple(self.q))
        if self.l < 2:
            raise ValueError("l must be >= 2")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not 1 <= self.c < self.l:
            raise ValueError("c must satisfy 1 <= c < l")
        if not 1 <= self.d <= self.m:
            raise ValueError("d must satisfy 1 <= d <= m")
        if self.tau < 2:
            raise ValueError("tau must be >= 2")
        if len(self.p) != self.c:
            raise ValueError(f"expected {self.c} p-expressions, got {len(self.p)}")
        if len(self.q) != self.d:
            raise ValueError(f"expected {self.d} q-expressions, got {len(self.q)}")
        for k, e in enumerate(self.p):
            bad = [v for v in ex.variables(e) if v[0] != "z" or v[1] > self.l]
            if bad:
                raise ValueError(f"p{k + 1} may only use z1..z{self.l}, found {bad}")
        for k, e in enumerate(self.q):
            for kind, idx in ex.variables(e):
                if kind == "t" or idx > (self.l if kind == "z" else self.m):
                    raise ValueError(f"q{k + 1} uses {kind}{idx} outside declared dims")

    @classmethod
    def from_strings(cls, l, m, c, d, tau, p, q, **kw):
        dims = (l, m)
        return cls(l, m, c, d, tau, [ex.parse(s, dims) for s in p], [ex.parse(s, dims) for s in q], **kw)

    @property
    def n(self) -> int:
        return self.l + self.m

    @cached_property
    def _kernel_M1(self):
        return ex.JetKernel(self.p + self.q, ex.problem_slots(self.l, self.m), order=1)

    @cached_property
    def _kernel_M2(self):
        return ex.JetKernel(self.p + self.q, ex.problem_slots(self.l, self.m), order=2)

    @cached_property
    def _kernel_S(self):
        return ex.JetKernel(self.p, ex.problem_slots(self.l, 0, with_w=False), order=1)

    @cached_property
    def _kernel_Q1(self):
        return ex.JetKernel(self.q, ex.problem_slots(self.l, self.m), order=1)

    def local(self, z, w, order=1) -> "Local":
        zeta = np.concatenate([np.asarray(z, complex), np.asarray(w, complex)])
        kern = self._kernel_M2 if order >= 2 else self._kernel_M1
        vals, grad, hess = kern(zeta)
        return Local(self, zeta, vals, grad, hess)

    def p_jets(self, z):
        """(values, dp/dz) of the p's at z; shapes (c,), (c, l)."""
        vals, grad, _ = self._kernel_S(np.asarray(z, complex))
        return vals.real, grad[:, : self.l]

    def q_jets(self, z, w):
        zeta = np.concatenate([np.asarray(z, complex), np.asarray(w, complex)])
        vals, grad, _ = self._kernel_Q1(zeta)
        return vals.real, grad[:, : self.n]

    def constraint_jets_M(self, zeta):
        """Real residuals of (p, q) and their d/dzeta rows, for the chart machinery."""
        vals, grad, _ = self._kernel_M1(zeta)
        return vals.real, grad[:, : self.n]

    def constraint_jets_S(self, z):
        return self.p_jets(z)


class Local:
    """All defining-function jets at one point of C^(l+m)."""

    def __init__(self, prob, zeta, vals, grad, hess):
        l, m, c, n = prob.l, prob.m, prob.c, prob.n
        self.prob = prob
        self.z = zeta[:l]
        self.w = zeta[l:]
        self.p = vals[:c].real
        self.q = vals[c:].real
        self.dpz = grad[:c, :l]
        self.dqz = grad[c:, :l]
        self.dqw = grad[c:, l:n]
        if hess is not None:
            hq = hess[c:]
            # [k, sigma, i] = d^2 q_k / d conj(w_sigma) d z_i  and  ... d w_i
            self.hwz = hq[:, n + l :, :l]
            self.hww = hq[:, n + l :, l:n]
        else:
            self.hwz = self.hww = None


@dataclass(frozen=True)
class Basis:
    matrix: np.ndarray
    tag: str

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


# --------------------------------------------------------------------------
# small dense helpers


def fix_phase(mat: np.ndarray) -> np.ndarray:
    """Rotate each column so its first non-negligible entry is real positive."""
    out = mat.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        big = np.abs(col)
        if big.max() == 0:
            continue
        k = int(np.argmax(big > 1e-12 * big.max()))
        out[:, j] = col * (abs(col[k]) / col[k])
    return out


def null_basis(A: np.ndarray, rank: int, rank_tol: float, what: str) -> np.ndarray:
    """Orthonormal null space of a full-row-rank ``A``; RankDefect otherwise."""
    rows, cols = A.shape
    if rows == 0:
        return np.eye(cols, dtype=complex)
    _, s, vh = np.linalg.svd(A)
    if s.size < rank or s[rank - 1] <= rank_tol:
        smin = s[rank - 1] if s.size >= rank else 0.0
        raise RankDefect(f"{what}: rank < {rank} (smallest singular value {smin:.3g})")
    return fix_phase(vh[rank:].conj().T)


def real_jacobian(dg: np.ndarray) -> np.ndarray:
    """Real Jacobian, in (Re, Im) coordinates, of real functions with d/dzeta rows ``dg``."""
    return np.hstack([2 * dg.real, -2 * dg.imag])


def newton_project(fn, x0: np.ndarray, tol: float, cap: int = NEWTON_CAP) -> tuple:
    """Minimal-norm Newton iteration for ``fn(x) = 0``.

    ``fn(x)`` returns ``(residual, dzeta_rows)`` at the complex point ``x``;
    steps are ``-pinv(J) r`` in real coordinates.  Returns ``(x, iterations)``.
    """
    x = np.array(x0, dtype=complex)
    n = x.size
    r, dg = fn(x)
    res = np.max(np.abs(r)) if r.size else 0.0
    it = 0
    worse = 0
    while res > tol:
        if it >= cap:
            raise NewtonDiverged(f"no convergence after {cap} iterations (residual {res:.3g})")
        J = real_jacobian(dg)
        step = -np.linalg.lstsq(J, r, rcond=None)[0]
        if not np.all(np.isfinite(step)) or np.linalg.norm(step) > 1e3 * (1 + np.linalg.norm(x)):
            raise NewtonDiverged(f"step growth at iteration {it} (residual {res:.3g})")
        x = x + (step[:n] + 1j * step[n:])
        it += 1
        r, dg = fn(x)
        new = np.max(np.abs(r))
        if not np.isfinite(new):
            raise NewtonDiverged("residual became non-finite")
        worse = worse + 1 if new >= res else 0
        if worse >= 5:
            raise NewtonDiverged(f"residual stagnated at {new:.3g}")
        res = new
    return x, it


# --------------------------------------------------------------------------
# operations


def residuals(prob: Problem, x: ex.Point):
    """Values ``(p_i(z), q_k(z, w))`` as real vectors."""
    loc = prob.local(x.z, x.w)
    return loc.p.copy(), loc.q.copy()


def project_to_S(prob: Problem, z0, tol=None) -> np.ndarray:
    """Newton projection of z0 onto S (p = 0)."""
    tol = prob.proj_tol if tol is None else tol
    z, _ = newton_project(prob.p_jets, np.asarray(z0, complex), tol)
    return z


def project_to_M(prob: Problem, x0: ex.Point, fixed_z=False, tol=None) -> ex.Point:
    """Project onto M with minimal-norm Newton steps.

    With ``fixed_z`` only w moves and only the q-residuals are driven to zero.
    """
    tol = prob.proj_tol if tol is None else tol
    l = prob.l
    if fixed_z:
        z = np.asarray(x0.z, complex)

        def fn(w):
            vals, dg = prob.q_jets(z, w)
            return vals, dg[:, l:]

        w, _ = newton_project(fn, x0.w, tol)
        return ex.Point(z, w)
    zeta, _ = newton_project(prob.constraint_jets_M, x0.zeta, tol)
    return ex.Point(zeta[:l], zeta[l:])


def _require_on_S(prob, z, pvals):
    if np.max(np.abs(pvals)) > prob.on_tol:
        raise OffManifold(f"z is not on S (p-residual {np.max(np.abs(pvals)):.3g})")


def _require_on_M(prob, loc):
    res = max(np.max(np.abs(loc.p), initial=0), np.max(np.abs(loc.q), initial=0))
    if res > prob.on_tol:
        raise OffManifold(f"(z, w) is not on M (residual {res:.3g})")


def horizontal_matrix(prob: Problem, dpz: np.ndarray) -> np.ndarray:
    return null_basis(dpz, prob.c, prob.rank_tol, "dp")


def horizontal_basis(prob: Problem, z) -> Basis:
    """Orthonormal basis of the (1,0) tangent space of S at z."""
    pvals, dpz = prob.p_jets(z)
    _require_on_S(prob, z, pvals)
    return Basis(horizontal_matrix(prob, dpz), "z")


def vertical_matrix(prob: Problem, loc: Local) -> np.ndarray:
    if prob.m == prob.d:
        null_basis(loc.dqw, prob.d, prob.rank_tol, "d_w q")
        return np.zeros((prob.m, 0), dtype=complex)
    return null_basis(loc.dqw, prob.d, prob.rank_tol, "d_w q")


def vertical_basis(prob: Problem, z, w) -> Basis:
    """Orthonormal basis of V(z, w): (1,0) tangents to M with zero z-part."""
    loc = prob.local(z, w)
    _require_on_M(prob, loc)
    return Basis(vertical_matrix(prob, loc), "w")


def lift_system(prob: Problem, loc: Local, V: np.ndarray):
    """Coefficients of the lifting equations ``Msys @ b + R @ a = 0``.

    The first d rows are the tangency rows; then, for each q_k and each
    vertical column v^j, the row expressing Levi-orthogonality to v^j.
    """
    rows_m = [loc.dqw]
    rows_r = [loc.dqz]
    if V.shape[1]:
        for k in range(prob.d):
            rows_m.append(V.conj().T @ loc.hww[k])
            rows_r.append(V.conj().T @ loc.hwz[k])
    return np.vstack(rows_m), np.vstack(rows_r)


def _local_for_lift(prob, z, w):
    order = 2 if prob.m > prob.d else 1
    return prob.local(z, w, order)


def fiber_levi_nondegenerate(prob: Problem, z, w, tol=None):
    """Whether the homogeneous lifting system has rank m; also its smallest singular value."""
    tol = prob.rank_tol if tol is None else tol
    loc = _local_for_lift(prob, z, w)
    _require_on_M(prob, loc)
    V = vertical_matrix(prob, loc)
    Msys, _ = lift_system(prob, loc, V)
    s = np.linalg.svd(Msys, compute_uv=False)
    smin = float(s[-1]) if s.size >= prob.m else 0.0
    return smin > tol, smin


def solve_lift(prob: Problem, Msys: np.ndarray, R: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Least-squares solution of ``Msys b = -R a`` with uniqueness/consistency checks.

    ``a`` may be a vector or a matrix of horizontal columns.
    """
    s = np.linalg.svd(Msys, compute_uv=False)
    smin = s[-1] if s.size >= prob.m else 0.0
    if smin <= prob.rank_tol:
        raise NDimensionDefect(f"lifting system has rank < m (smallest singular value {smin:.3g})")
    rhs = -(R @ a)
    b = np.linalg.lstsq(Msys, rhs, rcond=None)[0]
    resid = np.linalg.norm(Msys @ b - rhs)
    if resid > 1e-8 * max(1.0, np.linalg.norm(rhs)):
        raise Inconsistent(f"lifting system residual {resid:.3g}")
    return b


def lift_horizontal(prob: Problem, z, w, a) -> np.ndarray:
    """The unique b with ``sum a_i d/dz_i + sum b_j d/dw_j`` in N(z, w)."""
    a = np.asarray(a, complex)
    loc = _local_for_lift(prob, z, w)
    _require_on_M(prob, loc)
    H = horizontal_matrix(prob, loc.dpz)
    off = np.linalg.norm(a - H @ (H.conj().T @ a))
    if off > 1e-8 * max(1.0, np.linalg.norm(a)):
        raise NotHorizontal(f"a is not in H^S_z (distance {off:.3g})")
    V = vertical_matrix(prob, loc)
    Msys, R = lift_system(prob, loc, V)
    return solve_lift(prob, Msys, R, a)


def n_dimension(prob: Problem, z, w) -> int:
    """Complex dimension of N(z, w), from the rank structure of the lifting system."""
    loc = _local_for_lift(prob, z, w)
    _require_on_M(prob, loc)
    H = horizontal_matrix(prob, loc.dpz)
    V = vertical_matrix(prob, loc)
    Msys, R = lift_system(prob, loc, V)
    u, s, vh = np.linalg.svd(Msys)
    rank = int(np.sum(s > prob.rank_tol))
    kernel = prob.m - rank
    # horizontal directions whose right-hand side leaves the range of Msys
    Ur = u[:, :rank]
    RH = R @ H
    outside = RH - Ur @ (Ur.conj().T @ RH)
    if outside.size:
        so = np.linalg.svd(outside, compute_uv=False)
        defect = int(np.sum(so > prob.rank_tol * max(1.0, np.linalg.norm(RH))))
    else:
        defect = 0
    return prob.l - prob.c - defect + kernel


def frame_matrix(prob: Problem, loc: Local, H: np.ndarray) -> np.ndarray:
    """Columns (s_i, b_i) of the N-frame for horizontal columns ``H`` at ``loc``."""
    V = vertical_matrix(prob, loc)
    Msys, R = lift_system(prob, loc, V)
    B = solve_lift(prob, Msys, R, H)
    return np.vstack([H, B])


def frame_N(prob: Problem, z, w) -> Basis:
    """Frame n_i of N(z, w) with z-part equal to ``horizontal_basis(z)`` column i."""
    loc = _local_for_lift(prob, z, w)
    _require_on_M(prob, loc)
    H = horizontal_matrix(prob, loc.dpz)
    return Basis(frame_matrix(prob, loc, H), "zw")


def levi_pairings(prob: Problem, loc: Local, X: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``<ddbar q_k, X ^ conj(v^j)>`` for a (1,0) vector X = (a, b); shape (d, m-d)."""
    a, b = X[: prob.l], X[prob.l :]
    out = np.zeros((prob.d, V.shape[1]), dtype=complex)
    for k in range(prob.d):
        out[k] = V.conj().T @ (loc.hwz[k] @ a + loc.hww[k] @ b)
    return out


def sample_points(prob: Problem, count: int, rng: np.random.Generator, scale=1.0, max_tries=50):
    """Random points of M obtained by projecting Gaussian ambient points."""
    out = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > max_tries * count:
            raise NewtonDiverged(f"could only sample {len(out)} of {count} points on M")
        z0 = scale * (rng.standard_normal(prob.l) + 1j * rng.standard_normal(prob.l))
        w0 = scale * (rng.standard_normal(prob.m) + 1j * rng.standard_normal(prob.m))
        try:
            z = project_to_S(prob, z0)
            x = project_to_M(prob, ex.Point(z, w0), fixed_z=True)
        except (NewtonDiverged, ex.DivisionNearZero):
            continue
        out.append(x)
    return out
