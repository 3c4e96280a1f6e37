"""Leaf tracing: lift real tangents of S into M, integrate leaves along paths.

A leaf over a path z(t) in S is integrated as an ODE for w(t): the velocity
is the w-part of the unique lift of z'(t) into the real distribution spanned
by the frames n, conj n and the transverse fields T.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from . import geometry as geo
from .errors import (
    BasisDegenerate,
    CRFolError,
    MeshTooCoarse,
    NonRealLift,
    NotTangent,
    PathMismatch,
    StepRejected,
)
from .involutivity import H_FD, Chart, TransverseRecipe, find_transverse_recipe, transverse_values

TRACE_TOL = 1e-9
SEED_LIMIT = 1e-2
START_TOL = 1e-8
LOOP_TOL = 1e-10
TANGENT_TOL = 1e-8
REAL_TOL = 1e-8
IN_H_TOL = 1e-14
COND_REFRESH = 1e6
COND_LIMIT = 1e10
PATH_FD = 1e-3
STENCIL_H = 1e-4
MAX_STENCIL_H = 1e-2


# --------------------------------------------------------------------------
# paths


def _snap_S(prob, z0):
    """Project onto S, then take one extra Newton step so the result is smooth in z0."""
    z = geo.project_to_S(prob, z0)
    r, dg = prob.p_jets(z)
    J = geo.real_jacobian(dg)
    step = -np.linalg.lstsq(J, r, rcond=None)[0]
    return z + (step[: z.size] + 1j * step[z.size :])


@dataclass(frozen=True)
class PathSpec:
    """A path t -> z(t) given by expressions in t on [t0, t1]."""

    exprs: tuple
    t0: float
    t1: float
    project: bool = False

    @classmethod
    def parse(cls, text: str) -> "PathSpec":
        """Parse ``"(expr_t, ..., expr_t) on [t0, t1] project"``."""
        head, sep, tail = text.rpartition(" on ")
        if not sep:
            raise ex.ExpressionSyntaxError("path needs 'on [t0, t1]'", None, text)
        exprs = ex.parse_tuple(head, allow_t=True)
        tail = tail.strip()
        project = tail.endswith("project")
        if project:
            tail = tail[: -len("project")].strip()
        if not (tail.startswith("[") and tail.endswith("]")):
            raise ex.ExpressionSyntaxError("expected an interval [t0, t1]", None, text)
        bounds = tail[1:-1].split(",")
        if len(bounds) != 2:
            raise ex.ExpressionSyntaxError("interval needs exactly two bounds", None, text)
        t0, t1 = (ex.evaluate(ex.parse(b)) for b in bounds)
        if abs(t0.imag) > 0 or abs(t1.imag) > 0:
            raise ex.ExpressionSyntaxError("interval bounds must be real", None, text)
        return cls(tuple(exprs), t0.real, t1.real, project)

    @classmethod
    def chord(cls, z0, z1, project=True) -> "PathSpec":
        """Straight segment from z0 to z1 on [0, 1]."""
        t = ex.Var("t", 0)
        exprs = tuple(
            ex.add(ex.lit(a), ex.mul(ex.lit(b - a), t)) for a, b in zip(np.asarray(z0, complex), np.asarray(z1, complex))
        )
        return cls(exprs, 0.0, 1.0, project)

    def to_text(self) -> str:
        body = ", ".join(ex.to_text(e) for e in self.exprs)
        return f"({body}) on [{self.t0!r}, {self.t1!r}]" + (" project" if self.project else "")

    def raw(self, t):
        return ex.path_jets(self.exprs, t)

    def point(self, prob, t) -> np.ndarray:
        z, _ = self.raw(t)
        return _snap_S(prob, z) if self.project else z

    def velocity(self, prob, t) -> np.ndarray:
        if not self.project:
            return self.raw(t)[1]
        h = PATH_FD * max(abs(self.t1 - self.t0), 1e-12)
        f = [self.point(prob, t + k * h) for k in (-2, -1, 1, 2)]
        return (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h)


# --------------------------------------------------------------------------
# lifting


@dataclass
class RealLift:
    """Lift (u, v) of the real tangent u of S; ``gamma`` are the T-coefficients."""

    u: np.ndarray
    v: np.ndarray
    cond: float = 1.0
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(0))


class Lifter:
    """Lifts real tangent vectors of S to M, reusing one transverse recipe."""

    def __init__(self, prob, recipe: TransverseRecipe | None = None, h_fd=H_FD):
        self.prob = prob
        self.recipe = recipe
        self.h_fd = h_fd
        self.refreshes = 0

    def _recipe(self, z):
        if self.recipe is None:
            self.recipe = find_transverse_recipe(self.prob, z, self.h_fd)
        return self.recipe

    def needs_transverse(self, z, u) -> bool:
        _, dpz = self.prob.p_jets(z)
        H = geo.horizontal_matrix(self.prob, dpz)
        off = u - H @ (H.conj().T @ u)
        return np.linalg.norm(off) > IN_H_TOL * np.linalg.norm(u)

    def lift(self, z, w, u) -> RealLift:
        prob = self.prob
        l, n = prob.l, prob.l + prob.m
        z = np.asarray(z, complex)
        w = np.asarray(w, complex)
        u = np.asarray(u, complex)
        loc = prob.local(z, w, 2 if prob.m > prob.d else 1)
        unorm = np.linalg.norm(u)
        tang = np.max(np.abs(2 * (loc.dpz @ u).real), initial=0.0)
        if tang > TANGENT_TOL * max(1.0, unorm):
            raise NotTangent(f"u is not tangent to S (d p(u) = {tang:.3g})")
        H = geo.horizontal_matrix(prob, loc.dpz)
        V = geo.vertical_matrix(prob, loc)
        Msys, R = geo.lift_system(prob, loc, V)
        B = geo.solve_lift(prob, Msys, R, H)
        if unorm == 0:
            return RealLift(u, np.zeros(prob.m, complex))
        alpha = H.conj().T @ u
        if np.linalg.norm(u - H @ alpha) <= IN_H_TOL * unorm:
            return RealLift(u, B @ alpha)

        chart = Chart(prob, z, w, "M", self.h_fd)
        T, cond = self._transverse(chart, z)
        if cond > COND_REFRESH:
            self.recipe = find_transverse_recipe(prob, z, self.h_fd)
            self.refreshes += 1
            T, cond = self._transverse(chart, z)
        if cond > COND_LIMIT:
            raise BasisDegenerate(f"lift decomposition is singular (condition {cond:.3g})")
        k = H.shape[1]
        zero = np.zeros_like(H)
        basis = np.vstack([np.hstack([H, zero, T[:l]]), np.hstack([zero, H.conj(), T[n : n + l]])])
        coef = np.linalg.lstsq(basis, np.concatenate([u, u.conj()]), rcond=None)[0]
        alpha, beta, gamma = coef[:k], coef[k : 2 * k], coef[2 * k :]
        scale = max(1.0, np.linalg.norm(coef))
        if np.max(np.abs(beta - alpha.conj())) > REAL_TOL * scale or np.max(np.abs(gamma.imag)) > REAL_TOL * scale:
            raise NonRealLift("decomposition of a real vector has non-real coefficients")
        alpha = (alpha + beta.conj()) / 2
        gamma = gamma.real
        Tw = (T[l:n] + T[n + l :].conj()) / 2
        return RealLift(u, B @ alpha + Tw @ gamma, cond, gamma)

    def _transverse(self, chart, z):
        T = transverse_values(chart, self._recipe(z), "n")
        l, n = self.prob.l, chart.n
        H = chart.H0
        zero = np.zeros_like(H)
        basis = np.vstack([np.hstack([H, zero, T[:l]]), np.hstack([zero, H.conj(), T[n : n + l]])])
        basis = basis / np.linalg.norm(basis, axis=0)
        return T, float(np.linalg.cond(basis))


def lift_real_tangent(prob, z, w, u, recipe: TransverseRecipe | None = None) -> RealLift:
    """Lift a real tangent vector u of S at z to the leaf direction at (z, w)."""
    return Lifter(prob, recipe).lift(z, w, u)


# --------------------------------------------------------------------------
# traces


@dataclass
class LeafTrace:
    t: np.ndarray
    z: np.ndarray
    w: np.ndarray
    q_residual: np.ndarray
    cond: np.ndarray

    @property
    def samples(self) -> int:
        return self.t.size

    @property
    def end(self) -> ex.Point:
        return ex.Point(self.z[-1], self.w[-1])

    @property
    def max_residual(self) -> float:
        return float(np.max(self.q_residual))

    def header(self) -> list:
        cols = ["t"]
        for name, arr in (("z", self.z), ("w", self.w)):
            for j in range(arr.shape[1]):
                cols += [f"re_{name}{j + 1}", f"im_{name}{j + 1}"]
        return cols + ["q_residual"]

    def write_csv(self, path_or_file):
        """Write one row per sample with 17 significant digits."""
        if hasattr(path_or_file, "write"):
            self._write(path_or_file)
        else:
            with open(path_or_file, "w", newline="") as fh:
                self._write(fh)

    def _write(self, fh):
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(self.header())
        for k in range(self.samples):
            row = [self.t[k]]
            for v in np.concatenate([self.z[k], self.w[k]]):
                row += [v.real, v.imag]
            row.append(self.q_residual[k])
            out.writerow([f"{x:.17g}" for x in row])


def _q_residual(prob, z, w) -> float:
    vals, _ = prob.q_jets(z, w)
    return float(np.max(np.abs(vals)))


def prepare_seed(prob, seed: ex.Point) -> ex.Point:
    """Project a seed onto M, refusing seeds that are far from it."""
    x = geo.project_to_M(prob, seed)
    moved = np.linalg.norm(x.zeta - seed.zeta)
    if moved > SEED_LIMIT:
        raise geo.OffManifold(f"seed is {moved:.3g} away from M (limit {SEED_LIMIT})")
    return x


def trace_leaf(prob, seed: ex.Point, path: PathSpec, steps: int, project=True, trace_tol=TRACE_TOL,
               lifter: Lifter | None = None) -> LeafTrace:
    """Integrate the leaf through ``seed`` over ``path`` with classical RK4.

    With ``project`` the new w is snapped back onto the fiber of M after each step.
    """
    if steps < 1:
        raise ValueError("steps must be positive")
    lifter = lifter or Lifter(prob)
    seed = prepare_seed(prob, seed)
    t0, t1 = path.t0, path.t1
    z_start = path.point(prob, t0)
    if np.linalg.norm(z_start - seed.z) > START_TOL:
        raise PathMismatch(f"path starts {np.linalg.norm(z_start - seed.z):.3g} away from the seed")
    ts = t0 + (t1 - t0) * np.arange(steps + 1) / steps
    ts[-1] = t1
    dt = (t1 - t0) / steps
    cache = {}

    def at(t):
        hit = cache.get(t)
        if hit is None:
            hit = (path.point(prob, t), path.velocity(prob, t))
            cache[t] = hit
        return hit

    def rhs(t, w):
        z, zd = at(t)
        if lifter.needs_transverse(z, zd):
            w = geo.project_to_M(prob, ex.Point(z, w), fixed_z=True).w
        res = lifter.lift(z, w, zd)
        return res.v, res.cond

    l, m = prob.l, prob.m
    Z = np.zeros((steps + 1, l), complex)
    W = np.zeros((steps + 1, m), complex)
    qres = np.zeros(steps + 1)
    conds = np.ones(steps + 1)
    w = geo.project_to_M(prob, ex.Point(z_start, seed.w), fixed_z=True).w
    Z[0], W[0] = z_start, w
    qres[0] = _q_residual(prob, z_start, w)
    comp = np.zeros(m, complex)
    for k in range(steps):
        t = ts[k]
        th = t + dt / 2
        k1, conds[k] = rhs(t, w)
        k2, _ = rhs(th, w + dt / 2 * k1)
        k3, _ = rhs(th, w + dt / 2 * k2)
        k4, _ = rhs(ts[k + 1], w + dt * k3)
        # compensated summation keeps round-off below the RK4 error at high step counts
        y = dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4) - comp
        new = w + y
        comp = (new - w) - y
        w = new
        z = at(ts[k + 1])[0]
        if project:
            snapped = geo.project_to_M(prob, ex.Point(z, w), fixed_z=True).w
            if not np.array_equal(snapped, w):
                comp[:] = 0
            w = snapped
        r = _q_residual(prob, z, w)
        if project and r > trace_tol:
            raise StepRejected(f"q-residual {r:.3g} after projection at t = {ts[k + 1]:.6g}")
        Z[k + 1], W[k + 1], qres[k + 1] = z, w, r
    conds[-1] = conds[-2] if steps else 1.0
    return LeafTrace(ts, Z, W, qres, conds)


def holonomy(prob, seed: ex.Point, loop: PathSpec, steps: int, lifter: Lifter | None = None) -> float:
    """Endpoint displacement |w(t1) - w(t0)| of the leaf traced around a closed loop."""
    gap = np.linalg.norm(loop.point(prob, loop.t1) - loop.point(prob, loop.t0))
    if gap > LOOP_TOL:
        raise PathMismatch(f"loop does not close (gap {gap:.3g})")
    if loop.t1 == loop.t0:
        return 0.0
    tr = trace_leaf(prob, seed, loop, steps, lifter=lifter)
    return float(np.linalg.norm(tr.w[-1] - tr.w[0]))


# --------------------------------------------------------------------------
# foliation tables


def wirtinger_sbar(values: np.ndarray, h: float) -> np.ndarray:
    """s-bar derivative from values at z + h s, z - h s, z + i h s, z - i h s (axis 0)."""
    fp, fm, gp, gm = values
    return 0.5 * ((fp - fm) / (2 * h) + 1j * (gp - gm) / (2 * h))


def stencil_points(prob, z, h=STENCIL_H) -> np.ndarray:
    """Projected stencil points z +- h s_j, z +- i h s_j; shape (k, 4, l)."""
    H = geo.horizontal_basis(prob, z).matrix
    out = np.zeros((H.shape[1], 4, prob.l), complex)
    for j in range(H.shape[1]):
        s = H[:, j]
        for i, disp in enumerate((h * s, -h * s, 1j * h * s, -1j * h * s)):
            out[j, i] = _snap_S(prob, z + disp)
    return out


@dataclass
class FoliationRow:
    z: np.ndarray
    w: np.ndarray | None
    residual: float
    ok: bool = True
    error: str = ""
    stencil_z: np.ndarray | None = None
    stencil_w: np.ndarray | None = None


@dataclass
class Foliation:
    """Table z -> f(z) of leaf values traced from a common seed."""

    seed: ex.Point
    rows: list
    h: float | None = None

    @property
    def ok_rows(self) -> list:
        return [r for r in self.rows if r.ok]


def default_path(prob, z_from, z_to) -> PathSpec:
    """Chord between the two points, projected onto S sample by sample."""
    return PathSpec.chord(z_from, z_to, project=True)


def foliate(prob, seed: ex.Point, targets, steps=100, path_factory=default_path, stencil_h=None,
            lifter: Lifter | None = None) -> Foliation:
    """Trace one leaf per target from ``seed``.

    With ``stencil_h`` every row also traces the Wirtinger stencil around its
    target, each stencil point along its own path from the seed.
    """
    lifter = lifter or Lifter(prob)
    seed = prepare_seed(prob, seed)
    rows = []

    def reach(z_to):
        tr = trace_leaf(prob, seed, path_factory(prob, seed.z, z_to), steps, lifter=lifter)
        return tr.w[-1], tr.max_residual

    for target in targets:
        z = np.asarray(target, complex)
        try:
            w, res = reach(z)
            row = FoliationRow(z, w, res)
            if stencil_h is not None:
                pts = stencil_points(prob, z, stencil_h)
                vals = np.zeros(pts.shape[:2] + (prob.m,), complex)
                for idx in np.ndindex(pts.shape[:2]):
                    vals[idx], r = reach(pts[idx])
                    row.residual = max(row.residual, r)
                row.stencil_z, row.stencil_w = pts, vals
        except CRFolError as exc:
            row = FoliationRow(z, None, float("nan"), False, f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return Foliation(seed, rows, stencil_h)


def _require_stencil(mesh: Foliation):
    if mesh.h is None:
        raise MeshTooCoarse("the foliation table carries no stencil values")
    if mesh.h > MAX_STENCIL_H:
        raise MeshTooCoarse(f"stencil step {mesh.h:.3g} exceeds {MAX_STENCIL_H}")


def sbar_of(mesh: Foliation, fn) -> list:
    """s-bar derivatives of ``fn(z, w)`` at each usable row; one array (k, ...) per row."""
    _require_stencil(mesh)
    out = []
    for row in mesh.ok_rows:
        k = row.stencil_z.shape[0]
        derivs = []
        for j in range(k):
            vals = np.array([fn(row.stencil_z[j, i], row.stencil_w[j, i]) for i in range(4)])
            derivs.append(wirtinger_sbar(vals, mesh.h))
        out.append(np.array(derivs))
    return out


def cr_residual(prob, mesh: Foliation) -> float:
    """Max over rows and horizontal directions of |s-bar f| for the traced graph."""
    derivs = sbar_of(mesh, lambda z, w: w)
    if not derivs:
        raise MeshTooCoarse("no usable rows in the foliation table")
    return float(max(np.max(np.linalg.norm(d, axis=-1)) for d in derivs))
