"""Commutators of frame fields on charts of S and M, and the bracket certificates.

Fields are evaluated through a *graph chart*: around a base point x0 the
manifold is parametrized as ``u -> x0 + E u + Nrm t(u)`` where E is an
orthonormal basis of the real tangent space at x0 and the normal offset
``t(u)`` is found by Newton along the fixed normal space ``Nrm``.  The chart
coordinate ``u = E^T (x - x0)`` is then an exact linear coordinate on the
manifold, so a tangent vector X at any chart point acts on functions
through the constant matrix ``E^T`` and brackets need no chart Jacobians.

Frame fields are anchored at the chart base: the horizontal field s_i at z
is the projection of the base column onto H^S_z, which is smooth and equals
``horizontal_basis`` at the base.  n_i is then the unique N-lift of s_i.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import CombinatorialBudget, FrameDiscontinuity, NewtonDiverged, TypeDefect
from .report import FAIL, PASS, VACUOUS, Check

H_FD = 1e-4
CHART_TOL = 1e-14
JUMP_LIMIT = 0.5


# --------------------------------------------------------------------------
# bracket words


@dataclass(frozen=True)
class Letter:
    kind: str  # "n", "s" or "v"
    index: int  # 1-based
    bar: bool = False

    @property
    def length(self) -> int:
        return 1

    def __str__(self):
        return f"{'~' if self.bar else ''}{self.kind}{self.index}"


@dataclass(frozen=True)
class Bracket:
    left: "BracketWord"
    right: "BracketWord"

    @property
    def length(self) -> int:
        return self.left.length + self.right.length

    def __str__(self):
        return f"[{self.left},{self.right}]"


BracketWord = Letter | Bracket


def conj_word(w):
    if isinstance(w, Letter):
        return Letter(w.kind, w.index, not w.bar)
    return Bracket(conj_word(w.left), conj_word(w.right))


def substitute(w, kind: str):
    """Replace every letter's kind (e.g. s -> n to form T_i from t_i)."""
    if isinstance(w, Letter):
        return Letter(kind, w.index, w.bar)
    return Bracket(substitute(w.left, kind), substitute(w.right, kind))


def parse_word(text: str):
    """Parse words written like ``[n1,[n1,~n1]]``."""
    text = text.replace(" ", "")
    pos = 0

    def peek():
        if pos >= len(text):
            raise ValueError(f"unexpected end of word {text!r}")
        return text[pos]

    def word():
        nonlocal pos
        if peek() == "[":
            pos += 1
            a = word()
            if peek() != ",":
                raise ValueError(f"expected ',' at {pos} in {text!r}")
            pos += 1
            b = word()
            if peek() != "]":
                raise ValueError(f"expected ']' at {pos} in {text!r}")
            pos += 1
            return Bracket(a, b)
        bar = peek() == "~"
        if bar:
            pos += 1
        kind = peek()
        pos += 1
        start = pos
        while pos < len(text) and text[pos].isdigit():
            pos += 1
        if kind not in "nsv" or start == pos:
            raise ValueError(f"bad letter in {text!r}")
        return Letter(kind, int(text[start:pos]), bar)

    w = word()
    if pos != len(text):
        raise ValueError(f"trailing characters in {text!r}")
    return w


def enumerate_words(letters, min_len: int, max_len: int) -> list:
    """Right-normed bracket words, deduplicated by antisymmetry and Jacobi up to length 3."""
    letters = list(letters)
    by_len = {1: letters}
    if max_len >= 2:
        by_len[2] = [Bracket(a, b) for a, b in itertools.combinations(letters, 2)]
    if max_len >= 3:
        order = {x: k for k, x in enumerate(letters)}
        by_len[3] = [
            Bracket(a, inner)
            for inner in by_len[2]
            for a in letters
            if order[a] >= order[inner.left]
        ]
    for L in range(4, max_len + 1):
        by_len[L] = [Bracket(a, w) for w in by_len[L - 1] for a in letters]
    out = []
    for L in range(max(min_len, 1), max_len + 1):
        out.extend(by_len.get(L, []))
    return out


def conj_swap(vec: np.ndarray) -> np.ndarray:
    """Vector of the conjugate field: (A, B) -> (conj B, conj A)."""
    n = vec.size // 2
    return np.concatenate([vec[n:].conj(), vec[:n].conj()])


# --------------------------------------------------------------------------
# charts and fields


class Chart:
    """Graph chart of S (``kind='S'``) or M (``kind='M'``) around a base point."""

    def __init__(self, prob: geo.Problem, z, w=None, kind="M", h_fd=H_FD):
        self.prob = prob
        self.kind = kind
        self.h = h_fd
        if kind == "M":
            self.n = prob.l + prob.m
            self._jets = prob.constraint_jets_M
            base = np.concatenate([np.asarray(z, complex), np.asarray(w, complex)])
        elif kind == "S":
            self.n = prob.l
            self._jets = prob.constraint_jets_S
            base = np.asarray(z, complex)
        else:
            raise ValueError(f"unknown chart kind {kind!r}")
        r, dg = self._jets(base)
        if np.max(np.abs(r)) > prob.on_tol:
            raise geo.OffManifold(f"chart base is off the manifold (residual {np.max(np.abs(r)):.3g})")
        J = geo.real_jacobian(dg)
        _, s, vh = np.linalg.svd(J)
        rank = J.shape[0]
        if s[-1] <= prob.rank_tol:
            raise geo.RankDefect("defining functions are dependent at the chart base")
        self.base = base
        self.normal = vh[:rank].T
        self.E = vh[rank:].T
        self.dim = self.E.shape[1]
        self._points = {}
        self._frames = {}
        self._words = {}
        self._values = {}
        self.zero = np.zeros(self.dim)
        self._anchor()

    # geometry ------------------------------------------------------------

    def point(self, u) -> np.ndarray:
        """Ambient point with chart coordinate ``u``."""
        u = np.asarray(u, dtype=float)
        key = u.tobytes()
        hit = self._points.get(key)
        if hit is not None:
            return hit
        n = self.n
        disp = self.E @ u
        x = self.base + (disp[:n] + 1j * disp[n:])
        t = np.zeros(self.normal.shape[1])
        for _ in range(30):
            r, dg = self._jets(x)
            if np.max(np.abs(r)) <= CHART_TOL:
                break
            A = geo.real_jacobian(dg) @ self.normal
            dt = np.linalg.solve(A, -r)
            t = t + dt
            off = self.normal @ t
            x = self.base + (disp[:n] + 1j * disp[n:]) + (off[:n] + 1j * off[n:])
            if np.linalg.norm(dt) < 1e-17:
                break
        else:
            raise NewtonDiverged(f"chart projection failed at |u| = {np.linalg.norm(u):.3g}")
        self._points[key] = x
        return x

    def coords(self, delta: np.ndarray) -> np.ndarray:
        """Chart components of the real tangent vector with complex displacement ``delta``."""
        return self.E.T @ np.concatenate([delta.real, delta.imag])

    # anchored frames -----------------------------------------------------

    def _anchor(self):
        prob = self.prob
        l = prob.l
        z = self.base[:l]
        _, dpz = prob.p_jets(z)
        self.H0 = geo.horizontal_matrix(prob, dpz)
        if self.kind == "M":
            loc = prob.local(z, self.base[l:], 2 if prob.m > prob.d else 1)
            self.V0 = geo.vertical_matrix(prob, loc)
            self.local0 = loc
        else:
            self.V0 = np.zeros((0, 0), complex)
            self.local0 = None

    @staticmethod
    def _project_onto_null(A, X):
        # X minus its component in the row space of A (A has full row rank)
        return X - A.conj().T @ np.linalg.solve(A @ A.conj().T, A @ X)

    def frames(self, u) -> dict:
        """Anchored frame columns at chart point u: s (l x k), n, v as available."""
        u = np.asarray(u, dtype=float)
        key = u.tobytes()
        hit = self._frames.get(key)
        if hit is not None:
            return hit
        prob = self.prob
        l = prob.l
        x = self.point(u)
        z = x[:l]
        _, dpz = prob.p_jets(z)
        s = self._project_onto_null(dpz, self.H0)
        out = {"s": s}
        if self.kind == "M":
            w = x[l:]
            loc = prob.local(z, w, 2 if prob.m > prob.d else 1)
            if self.V0.shape[1]:
                V = self._project_onto_null(loc.dqw, self.V0)
            else:
                V = self.V0
            Msys, R = geo.lift_system(prob, loc, V)
            B = geo.solve_lift(prob, Msys, R, s)
            out["n"] = np.vstack([s, B])
            out["v"] = V
        self._frames[key] = out
        return out

    def letter_vector(self, letter: Letter, u) -> np.ndarray:
        fr = self.frames(u)
        l, n = self.prob.l, self.n
        vec = np.zeros(2 * n, dtype=complex)
        k = letter.index - 1
        if letter.kind == "s":
            col = np.zeros(n, complex)
            col[:l] = fr["s"][:, k]
        elif letter.kind == "n":
            if "n" not in fr:
                raise ValueError("n-fields exist only on charts of M")
            col = fr["n"][:, k]
        elif letter.kind == "v":
            if self.kind != "M":
                raise ValueError("v-fields exist only on charts of M")
            col = np.zeros(n, complex)
            col[l:] = fr["v"][:, k]
        else:
            raise ValueError(f"unknown letter {letter}")
        if letter.bar:
            vec[n:] = col.conj()
        else:
            vec[:n] = col
        return vec

    # word fields ---------------------------------------------------------

    def word_field(self, word) -> "Field":
        hit = self._words.get(word)
        if hit is not None:
            return hit
        if isinstance(word, Letter):
            f = Field(self, lambda u, w=word: self.letter_vector(w, u), str(word))
        else:
            f = bracket(self, self.word_field(word.left), self.word_field(word.right))
        self._words[word] = f
        return f

    def word_value(self, word) -> np.ndarray:
        """Value at the base; a conjugate word reuses its partner's value exactly."""
        hit = self._values.get(word)
        if hit is not None:
            return hit
        partner = self._values.get(conj_word(word))
        val = conj_swap(partner) if partner is not None else self.word_field(word)(self.zero)
        self._values[word] = val
        return val


class Field:
    """A complex vector field on a chart, as a cached function of chart coordinates."""

    def __init__(self, chart: Chart, fn, label=""):
        self.chart = chart
        self.fn = fn
        self.label = label
        self._cache = {}

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        key = u.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            hit = self.fn(u)
            self._cache[key] = hit
        return hit

    def __mul__(self, k):
        return Field(self.chart, lambda u: k * self(u), f"{k}*{self.label}")

    __rmul__ = __mul__

    def __add__(self, other):
        return Field(self.chart, lambda u: self(u) + other(u), f"({self.label}+{other.label})")

    def conj(self):
        return Field(self.chart, lambda u: conj_swap(self(u)), f"~{self.label}")

    @classmethod
    def ambient(cls, chart: Chart, fn, label="ambient"):
        """Field from a function of the ambient point returning ``[A, B]``."""
        return cls(chart, lambda u: np.asarray(fn(chart.point(u)), complex), label)


def _derivative(F: Field, u, r: np.ndarray) -> np.ndarray:
    """Central difference of F along chart direction r at u."""
    norm = np.linalg.norm(r)
    if norm == 0:
        return np.zeros_like(F(u))
    h = F.chart.h
    step = h * (r / norm)
    fp = F(u + step)
    fm = F(u - step)
    jump = np.linalg.norm(fp - fm)
    if jump > JUMP_LIMIT:
        raise FrameDiscontinuity(f"field {F.label} jumps by {jump:.3g} across an FD stencil")
    return norm * (fp - fm) / (2 * h)


def apply(X_val: np.ndarray, F: Field, u) -> np.ndarray:
    """X(F) at u, for the tangent vector X_val = [A, B] at that point."""
    n = X_val.size // 2
    A, B = X_val[:n], X_val[n:]
    d_re = (A + B.conj()) / 2
    d_im = (A - B.conj()) / 2j
    chart = F.chart
    return _derivative(F, u, chart.coords(d_re)) + 1j * _derivative(F, u, chart.coords(d_im))


def bracket(chart: Chart, X: Field, Y: Field) -> Field:
    def fn(u):
        return apply(X(u), Y, u) - apply(Y(u), X, u)

    return Field(chart, fn, f"[{X.label},{Y.label}]")


# --------------------------------------------------------------------------
# public operations


def make_chart(prob, z, w=None, kind="M", h_fd=H_FD) -> Chart:
    return Chart(prob, z, w, kind, h_fd)


def frame_field(prob, chart: Chart, which) -> Field:
    """Field for a selector such as ``"n1"``, ``"~s2"`` or a :class:`Letter`."""
    letter = parse_word(which) if isinstance(which, str) else which
    if not isinstance(letter, Letter):
        raise ValueError("frame selectors are single letters")
    return chart.word_field(letter)


def commutator(prob, chart: Chart, X: Field, Y: Field) -> np.ndarray:
    """[X, Y] at the chart base, as ``[A, B]`` coefficients."""
    return bracket(chart, X, Y)(chart.zero)


def evaluate_word(prob, chart: Chart, word) -> np.ndarray:
    if isinstance(word, str):
        word = parse_word(word)
    return chart.word_value(word)


@dataclass
class TransverseRecipe:
    """Real combinations of bracket words completing {s, conj s} to a basis of CTS."""

    terms: list  # per t_i: list of (complex coefficient, word over s letters)
    z0: np.ndarray
    smin: float
    note: str = "greedy search over X + conj X and i(X - conj X), shortest words first"
    t_values: np.ndarray = field(default=None, repr=False)

    def words_for(self, kind: str):
        return [[(c, substitute(w, kind)) for c, w in tr] for tr in self.terms]

    def describe(self) -> list:
        return [" + ".join(f"({c:.3g})*{w}" for c, w in tr) for tr in self.terms]


def combine(chart: Chart, terms) -> np.ndarray:
    return sum(c * chart.word_value(w) for c, w in terms)


def _normalized_smin(cols: np.ndarray) -> float:
    norms = np.linalg.norm(cols, axis=0)
    s = np.linalg.svd(cols / norms, compute_uv=False)
    return float(s[-1])


def tangent_frame_S(chart: Chart) -> np.ndarray:
    """Columns s_i and conj s_i at the base of an S-chart, as [A, B] vectors."""
    H = chart.H0
    zero = np.zeros_like(H)
    return np.vstack([np.hstack([H, zero]), np.hstack([zero, H.conj()])])


def find_transverse_recipe(prob, z0, h_fd=H_FD, accept_tol=1e-6) -> TransverseRecipe:
    chart = Chart(prob, z0, kind="S", h_fd=h_fd)
    k = prob.l - prob.c
    cols = tangent_frame_S(chart)
    letters = [Letter("s", i + 1) for i in range(k)] + [Letter("s", i + 1, True) for i in range(k)]
    terms, tvals = [], []
    for word in enumerate_words(letters, 2, prob.tau):
        if len(terms) == prob.c:
            break
        X = chart.word_value(word)
        Xc = conj_swap(X)
        for cand, tr in ((X + Xc, [(1.0 + 0j, word), (1.0 + 0j, conj_word(word))]),
                         (1j * (X - Xc), [(1j, word), (-1j, conj_word(word))])):
            if len(terms) == prob.c or np.linalg.norm(cand) < 1e-8:
                continue
            trial = np.column_stack([cols] + tvals + [cand])
            if _normalized_smin(trial) > accept_tol:
                terms.append(tr)
                tvals.append(combine(chart, tr))
    if len(terms) < prob.c:
        raise TypeDefect(
            f"brackets of length <= tau={prob.tau} span only {2 * k + len(terms)} of {2 * prob.l - prob.c} directions"
        )
    full = np.column_stack([cols] + tvals)
    return TransverseRecipe(terms, np.asarray(z0, complex), _normalized_smin(full), t_values=np.column_stack(tvals))


def transverse_values(chart: Chart, recipe: TransverseRecipe, kind="n") -> np.ndarray:
    """T_i (kind ``n``, on an M-chart) or t_i (kind ``s``) at the chart base; shape (2n, c)."""
    return np.column_stack([combine(chart, tr) for tr in recipe.words_for(kind)])


def outside_V(prob, vec: np.ndarray, V: np.ndarray) -> float:
    """Norm of the part of [A, B] outside V + conj V."""
    l, n = prob.l, prob.l + prob.m
    A, B = vec[:n], vec[n:]
    aw, bw = A[l:], B[l:]
    aw_out = aw - V @ (V.conj().T @ aw)
    bw_out = bw - V.conj() @ (V.T @ bw)
    return float(np.sqrt(np.linalg.norm(A[:l]) ** 2 + np.linalg.norm(B[:l]) ** 2
                         + np.linalg.norm(aw_out) ** 2 + np.linalg.norm(bw_out) ** 2))


def check_lemma1(prob, chart: Chart, word, tol=1e-4) -> Check:
    """[T, v + conj v] stays in V + conj V for every vertical frame field v."""
    if isinstance(word, str):
        word = parse_word(word)
    if prob.m == prob.d:
        return Check("lemma1", VACUOUS, 0.0, tol, {"word": str(word), "reason": "V = 0 when m = d"})
    T = chart.word_field(word)
    worst = 0.0
    for j in range(prob.m - prob.d):
        v = chart.word_field(Letter("v", j + 1))
        vb = chart.word_field(Letter("v", j + 1, True))
        val = bracket(chart, T, v + vb)(chart.zero)
        worst = max(worst, outside_V(prob, val, chart.V0))
    return Check.against("lemma1", worst, tol, word=str(word))


def check_N_involutive(prob, chart: Chart, tol=1e-4) -> Check:
    """[n_i, n_j] lies in N at the base for every pair i < j."""
    k = prob.l - prob.c
    if k < 2:
        return Check("N_involutive", VACUOUS, 0.0, tol, {"reason": "fewer than two frame fields"})
    n = chart.n
    l = prob.l
    Ncols = chart.frames(chart.zero)["n"]
    loc = chart.local0
    Msys, R = geo.lift_system(prob, loc, chart.V0)
    worst, pairs = 0.0, {}
    for i, j in itertools.combinations(range(k), 2):
        val = chart.word_value(Bracket(Letter("n", i + 1), Letter("n", j + 1)))
        A, B = val[:n], val[n:]
        coef = np.linalg.lstsq(Ncols, A, rcond=None)[0]
        fit = np.linalg.norm(A - Ncols @ coef) + np.linalg.norm(B)
        rows = np.linalg.norm(Msys @ A[l:] + R @ A[:l])
        pairs[f"{i + 1},{j + 1}"] = {"fit": fit, "rows": rows}
        worst = max(worst, fit, rows)
    return Check.against("N_involutive", worst, tol, pairs=pairs)


def pairing_rows(prob, loc) -> np.ndarray:
    """Rows of the 1-forms dp_1..dp_c, dq_1..dq_d over zeta (holomorphic parts)."""
    rows_p = np.hstack([loc.dpz, np.zeros((prob.c, prob.m), complex)])
    rows_q = np.hstack([loc.dqz, loc.dqw])
    return rows_p, rows_q


def check_condition_I(prob, z0, w0, max_len=None, tol=1e-3, cap=100_000, h_fd=H_FD,
                      min_norm=1e-6) -> Check:
    """Wedge condition on bracket words of lengths 2..max_len over {n_i, conj n_i}."""
    max_len = prob.tau + 1 if max_len is None else max_len
    k = prob.l - prob.c
    ndim = geo.n_dimension(prob, z0, w0)
    if ndim != k:
        return Check("condition_I", FAIL, math.inf, tol, {"reason": f"dim N = {ndim} != l - c = {k}"})
    chart = Chart(prob, z0, w0, "M", h_fd)
    letters = [Letter("n", i + 1) for i in range(k)] + [Letter("n", i + 1, True) for i in range(k)]
    words = enumerate_words(letters, 2, max_len)
    size = prob.c + 1
    n_tuples = math.comb(len(words), size) * prob.d
    if n_tuples > cap:
        raise CombinatorialBudget(f"{n_tuples} tuples exceed the cap {cap}")
    n = chart.n
    rows_p, rows_q = pairing_rows(prob, chart.local0)
    usable, skipped = [], []
    for wd in words:
        val = chart.word_value(wd)
        norm = np.linalg.norm(val)
        if norm < min_norm:
            skipped.append(str(wd))
        else:
            usable.append((wd, val[:n], norm))
    details = {"max_len": max_len, "words": len(words), "usable": len(usable), "skipped": skipped}
    if len(usable) < size:
        details["reason"] = "fewer usable words than c + 1"
        return Check("condition_I", VACUOUS, 0.0, tol, details)
    pnorm = np.prod(np.linalg.norm(rows_p, axis=1))
    worst, worst_at = 0.0, None
    for kq in range(prob.d):
        forms = np.vstack([rows_p, rows_q[kq : kq + 1]])
        fnorm = pnorm * np.linalg.norm(rows_q[kq])
        pair = {id_: forms @ A for id_, (_, A, _) in enumerate(usable)}
        for combo in itertools.combinations(range(len(usable)), size):
            mat = np.column_stack([pair[j] for j in combo])
            scale = fnorm * np.prod([usable[j][2] for j in combo])
            val = abs(np.linalg.det(mat)) / scale
            if val > worst:
                worst, worst_at = val, (kq + 1, [str(usable[j][0]) for j in combo])
    details["worst"] = worst_at
    return Check.against("condition_I", worst, tol, **details)
