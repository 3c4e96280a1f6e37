"""Real defining-function expressions over z, w and their conjugates.

Grammar (whitespace insignificant)::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := atom ('^' ['-'] integer)?
    atom   := number | 'i' | 'pi' | var
            | ('conj'|'re'|'im'|'abs2'|'exp'|'cos'|'sin') '(' expr ')'
            | '(' expr ')' | '-' atom
    var    := 'z'digits | 'w'digits | 't'

Note that ``-x^2`` parses as ``(-x)^2``: unary minus binds at atom level.

Parsing returns a *normalized* tree: ``re``, ``im``, ``abs2`` and unary
minus are desugared, conjugation is pushed down to the variables, and
operations on two literals are folded.  Derivatives are computed by
forward-mode propagation over the Wirtinger coordinates
``zeta_1..zeta_N, conj(zeta_1)..conj(zeta_N)``, treated as independent.
The propagation rules are staged into straight-line Python source once
per expression set (see :class:`JetKernel`), which keeps pointwise jets
cheap enough to sit inside ODE right-hand sides.
"""

from __future__ import annotations

import cmath
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np

from .errors import DivisionNearZero, ExpressionSyntaxError, NotRealValued, UnknownVariable

DIV_EPS = 1e-300
REAL_TOL = 1e-10


# --------------------------------------------------------------------------
# tree


@dataclass(frozen=True)
class Lit:
    value: complex


@dataclass(frozen=True)
class Var:
    kind: str  # "z", "w" or "t"
    index: int  # 1-based; 0 for t


@dataclass(frozen=True)
class Conj:
    arg: "Expression"


@dataclass(frozen=True)
class Add:
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Sub:
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Mul:
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Div:
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Pow:
    base: "Expression"
    exponent: int


@dataclass(frozen=True)
class Call:
    name: str  # holomorphic entire function: exp, cos, sin
    arg: "Expression"


Expression = Union[Lit, Var, Conj, Add, Sub, Mul, Div, Pow, Call]

_FUNCS = {"exp": cmath.exp, "cos": cmath.cos, "sin": cmath.sin}


def _check_denominator(value):
    if abs(value) < DIV_EPS:
        raise DivisionNearZero(f"denominator magnitude {abs(value):.3g} below {DIV_EPS:g}")


# smart constructors: fold literal-literal operations, push conj to the leaves


def lit(value) -> Lit:
    return Lit(complex(value))


def add(a, b):
    if isinstance(a, Lit) and isinstance(b, Lit):
        return Lit(a.value + b.value)
    return Add(a, b)


def sub(a, b):
    if isinstance(a, Lit) and isinstance(b, Lit):
        return Lit(a.value - b.value)
    return Sub(a, b)


def mul(a, b):
    if isinstance(a, Lit) and isinstance(b, Lit):
        return Lit(a.value * b.value)
    return Mul(a, b)


def div(a, b):
    if isinstance(a, Lit) and isinstance(b, Lit):
        _check_denominator(b.value)
        return Lit(a.value / b.value)
    return Div(a, b)


def power(base, n: int):
    if n == 1:
        return base
    if isinstance(base, Lit):
        if n < 0:
            _check_denominator(base.value)
        return Lit(base.value**n)
    return Pow(base, n)


def call(name, arg):
    if isinstance(arg, Lit):
        return Lit(complex(_FUNCS[name](arg.value)))
    return Call(name, arg)


def neg(e):
    return mul(Lit(-1 + 0j), e)


def conj(e):
    if isinstance(e, Lit):
        return Lit(e.value.conjugate())
    if isinstance(e, Var):
        return e if e.kind == "t" else Conj(e)
    if isinstance(e, Conj):
        return e.arg
    if isinstance(e, Add):
        return add(conj(e.left), conj(e.right))
    if isinstance(e, Sub):
        return sub(conj(e.left), conj(e.right))
    if isinstance(e, Mul):
        return mul(conj(e.left), conj(e.right))
    if isinstance(e, Div):
        return div(conj(e.left), conj(e.right))
    if isinstance(e, Pow):
        return power(conj(e.base), e.exponent)
    if isinstance(e, Call):
        # exp, cos, sin have real Taylor coefficients
        return call(e.name, conj(e.arg))
    raise TypeError(f"not an expression node: {e!r}")


def real_part(e):
    return mul(Lit(0.5 + 0j), add(e, conj(e)))


def imag_part(e):
    return mul(Lit(-0.5j), sub(e, conj(e)))


def abs2(e):
    return mul(e, conj(e))


# --------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),\[\];=]))"
)
_VAR = re.compile(r"([zw])(\d+)$")
_UNARY = {
    "conj": conj,
    "re": real_part,
    "im": imag_part,
    "abs2": abs2,
    "exp": lambda e: call("exp", e),
    "cos": lambda e: call("cos", e),
    "sin": lambda e: call("sin", e),
}


def tokenize(text: str):
    """Split ``text`` into ``(kind, value, position)`` tokens."""
    tokens = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionSyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, dims, allow_t):
        self.text = text
        self.l, self.m = dims
        self.allow_t = allow_t
        self.tokens = tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        return ExpressionSyntaxError(message, tok[2], self.text)

    def expect(self, value):
        tok = self.take()
        if tok[1] != value or tok[0] == "end":
            raise self.error(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok)
        return tok

    def parse(self):
        e = self.expr()
        if self.peek()[0] != "end":
            raise self.error(f"unexpected {self.peek()[1]!r}")
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self):
        e = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.factor()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def factor(self):
        e = self.atom()
        if self.peek()[1] == "^":
            self.take()
            sign = 1
            if self.peek()[1] == "-":
                self.take()
                sign = -1
            tok = self.take()
            if tok[0] != "num" or not tok[1].isdigit():
                raise self.error("exponent must be an integer", tok)
            n = sign * int(tok[1])
            if n == 0:
                return Lit(1 + 0j)
            e = power(e, n)
        return e

    def atom(self):
        tok = self.take()
        kind, value, pos = tok
        if kind == "num":
            return Lit(complex(float(value)))
        if kind == "op" and value == "-":
            return neg(self.atom())
        if kind == "op" and value == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "name":
            if value in _UNARY:
                self.expect("(")
                e = self.expr()
                self.expect(")")
                return _UNARY[value](e)
            if value == "i":
                return Lit(1j)
            if value == "pi":
                return Lit(complex(math.pi))
            if value == "t":
                if not self.allow_t:
                    raise UnknownVariable(f"'t' is only legal in path expressions (position {pos})")
                return Var("t", 0)
            m = _VAR.match(value)
            if m:
                k, idx = m.group(1), int(m.group(2))
                bound = self.l if k == "z" else self.m
                if not 1 <= idx <= bound:
                    raise UnknownVariable(
                        f"{value} out of range: {k}-index must be in 1..{bound} (position {pos})"
                    )
                return Var(k, idx)
            raise UnknownVariable(f"unknown identifier {value!r} (position {pos})")
        if kind == "end":
            raise self.error("unexpected end of input", tok)
        raise self.error(f"unexpected {value!r}", tok)


def parse(text: str, dims=(0, 0), allow_t=False) -> Expression:
    """Parse ``text`` into a normalized expression over ``dims = (l, m)``."""
    if not text or not text.strip():
        raise ExpressionSyntaxError("empty expression", 0, text)
    return _Parser(text, dims, allow_t).parse()


def parse_tuple(text: str, dims=(0, 0), allow_t=False):
    """Parse a parenthesized, comma-separated list of expressions."""
    s = text.strip()
    if not (s.startswith("(") and s.endswith(")")):
        raise ExpressionSyntaxError("expected a parenthesized tuple", 0, text)
    parts, depth, start = [], 0, 1
    for k, ch in enumerate(s):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 1:
            parts.append(s[start:k])
            start = k + 1
    parts.append(s[start:-1])
    return tuple(parse(p, dims, allow_t) for p in parts)


def _fmt_literal(v: complex) -> str:
    if v.imag == 0:
        return repr(float(v.real))
    return f"({float(v.real)!r} + {float(v.imag)!r}*i)"


def to_text(e: Expression) -> str:
    """Print a normalized tree; ``parse(to_text(e)) == e``."""
    if isinstance(e, Lit):
        return _fmt_literal(e.value)
    if isinstance(e, Var):
        return "t" if e.kind == "t" else f"{e.kind}{e.index}"
    if isinstance(e, Conj):
        return f"conj({to_text(e.arg)})"
    if isinstance(e, Pow):
        return f"({to_text(e.base)})^{e.exponent}"
    if isinstance(e, Call):
        return f"{e.name}({to_text(e.arg)})"
    op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(e)]
    return f"({to_text(e.left)} {op} {to_text(e.right)})"


def variables(e: Expression) -> set:
    """Set of ``(kind, index)`` pairs appearing in ``e``."""
    if isinstance(e, Var):
        return {(e.kind, e.index)}
    if isinstance(e, Lit):
        return set()
    if isinstance(e, (Conj, Call)):
        return variables(e.arg)
    if isinstance(e, Pow):
        return variables(e.base)
    return variables(e.left) | variables(e.right)


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class Point:
    z: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=complex).reshape(-1))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=complex).reshape(-1))

    @property
    def zeta(self) -> np.ndarray:
        return np.concatenate([self.z, self.w])


def _lookup(var, x, t):
    if var.kind == "t":
        if t is None:
            raise UnknownVariable("expression uses t but no path parameter was given")
        return complex(t)
    vec = x.z if var.kind == "z" else x.w
    if var.index > len(vec):
        raise UnknownVariable(f"{var.kind}{var.index} out of range for point of length {len(vec)}")
    return complex(vec[var.index - 1])


def evaluate(e: Expression, x: Point = None, t=None) -> complex:
    """Evaluate by direct tree walk (independent of the compiled jets)."""
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, Var):
        return _lookup(e, x, t)
    if isinstance(e, Conj):
        return evaluate(e.arg, x, t).conjugate()
    if isinstance(e, Add):
        return evaluate(e.left, x, t) + evaluate(e.right, x, t)
    if isinstance(e, Sub):
        return evaluate(e.left, x, t) - evaluate(e.right, x, t)
    if isinstance(e, Mul):
        return evaluate(e.left, x, t) * evaluate(e.right, x, t)
    if isinstance(e, Div):
        den = evaluate(e.right, x, t)
        _check_denominator(den)
        return evaluate(e.left, x, t) / den
    if isinstance(e, Pow):
        b = evaluate(e.base, x, t)
        if e.exponent < 0:
            _check_denominator(b)
        return b**e.exponent
    if isinstance(e, Call):
        return complex(_FUNCS[e.name](evaluate(e.arg, x, t)))
    raise TypeError(f"not an expression node: {e!r}")


# --------------------------------------------------------------------------
# staged forward-mode jets


class _Emitter:
    """Emit straight-line code propagating value, gradient and Hessian.

    Gradients and Hessians are kept sparse at emission time: a node only
    carries entries for the coordinates it structurally depends on.
    """

    def __init__(self, slots, n, order):
        self.slots = slots
        self.n = n
        self.order = order
        self.lines = []
        self.consts = {}
        self.memo = {}
        self.count = 0

    def tmp(self, code):
        name = f"t{self.count}"
        self.count += 1
        self.lines.append(f"    {name} = {code}")
        return name

    def const(self, value):
        name = f"K{len(self.consts)}"
        self.consts[name] = complex(value)
        return name

    @staticmethod
    def _mul(a, b):
        if a == "1":
            return b
        if b == "1":
            return a
        return f"{a}*{b}"

    def _sum(self, terms):
        terms = [t for t in terms if t is not None]
        if not terms:
            return None
        if len(terms) == 1 and terms[0].isidentifier():
            return terms[0]
        return self.tmp(" + ".join(terms))

    def emit(self, node):
        hit = self.memo.get(node)
        if hit is not None:
            return hit
        res = self._emit(node)
        self.memo[node] = res
        return res

    def _emit(self, node):
        order = self.order
        if isinstance(node, Lit):
            return self.const(node.value), {}, {}
        if isinstance(node, (Var, Conj)):
            var = node if isinstance(node, Var) else node.arg
            slot = self.slots[(var.kind, var.index)]
            if isinstance(node, Var):
                return f"x[{slot}]", ({slot: "1"} if order >= 1 else {}), {}
            return f"xc[{slot}]", ({self.n + slot: "1"} if order >= 1 else {}), {}
        if isinstance(node, (Add, Sub)):
            va, ga, ha = self.emit(node.left)
            vb, gb, hb = self.emit(node.right)
            sign = "+" if isinstance(node, Add) else "-"
            v = self.tmp(f"{va} {sign} {vb}")
            return v, self._combine(ga, gb, sign), self._combine(ha, hb, sign)
        if isinstance(node, Mul):
            return self._product(self.emit(node.left), self.emit(node.right))
        if isinstance(node, Div):
            return self._product(self.emit(node.left), self._recip(self.emit(node.right)))
        if isinstance(node, Pow):
            base = self.emit(node.base)
            if node.exponent < 0:
                base = self._recip(base)
            return self._intpow(base, abs(node.exponent))
        if isinstance(node, Call):
            va, ga, ha = self.emit(node.arg)
            if node.name == "exp":
                v = self.tmp(f"_cexp({va})")
                return self._chain((va, ga, ha), v, v, v)
            if node.name == "cos":
                v = self.tmp(f"_ccos({va})")
                if order == 0:
                    return v, {}, {}
                d1 = self.tmp(f"-_csin({va})")
                return self._chain((va, ga, ha), v, d1, self.tmp(f"-{v}"))
            if node.name == "sin":
                v = self.tmp(f"_csin({va})")
                if order == 0:
                    return v, {}, {}
                d1 = self.tmp(f"_ccos({va})")
                return self._chain((va, ga, ha), v, d1, self.tmp(f"-{v}"))
        raise TypeError(f"cannot compile node {node!r}")

    def _combine(self, ga, gb, sign):
        out = {}
        for k in ga.keys() | gb.keys():
            a, b = ga.get(k), gb.get(k)
            if a is not None and b is not None:
                out[k] = self.tmp(f"{a} {sign} {b}")
            elif a is not None:
                out[k] = a
            else:
                out[k] = b if sign == "+" else self.tmp(f"-{b}")
        return out

    def _product(self, a, b):
        va, ga, ha = a
        vb, gb, hb = b
        v = self.tmp(f"{va}*{vb}")
        g = {}
        for k in ga.keys() | gb.keys():
            terms = []
            if k in ga:
                terms.append(self._mul(ga[k], vb))
            if k in gb:
                terms.append(self._mul(gb[k], va))
            g[k] = self._sum(terms)
        h = {}
        if self.order >= 2:
            keys = set(ha) | set(hb)
            for k in ga:
                for l in gb:
                    keys.add((min(k, l), max(k, l)))
            for kl in keys:
                k, l = kl
                terms = []
                if kl in ha:
                    terms.append(self._mul(ha[kl], vb))
                if kl in hb:
                    terms.append(self._mul(hb[kl], va))
                if k in ga and l in gb:
                    terms.append(self._mul(ga[k], gb[l]))
                if l in ga and k in gb:
                    terms.append(self._mul(ga[l], gb[k]))
                h[kl] = self._sum(terms)
        return v, g, h

    def _chain(self, arg, v, d1, d2):
        """Apply a unary function with value v and derivatives d1, d2."""
        _, ga, ha = arg
        g = {k: self.tmp(self._mul(d1, gk)) for k, gk in ga.items()}
        h = {}
        if self.order >= 2:
            keys = set(ha)
            ks = sorted(ga)
            for i, k in enumerate(ks):
                for l in ks[i:]:
                    keys.add((k, l))
            for kl in keys:
                k, l = kl
                terms = []
                if kl in ha:
                    terms.append(self._mul(d1, ha[kl]))
                if k in ga and l in ga:
                    terms.append(self._mul(d2, self._mul(ga[k], ga[l])))
                h[kl] = self._sum(terms)
        return v, g, h

    def _recip(self, arg):
        va = arg[0]
        self.lines.append(f"    if abs({va}) < {DIV_EPS!r}: _divzero({va})")
        v = self.tmp(f"1/{va}")
        if self.order == 0:
            return v, {}, {}
        d1 = self.tmp(f"-{v}*{v}")
        d2 = self.tmp(f"2*{v}*{v}*{v}") if self.order >= 2 else None
        return self._chain(arg, v, d1, d2)

    def _intpow(self, arg, n):
        va = arg[0]
        if n == 0:
            return self.const(1), {}, {}
        if n == 1:
            return arg
        v = self.tmp(f"{va}**{n}")
        if self.order == 0:
            return v, {}, {}
        d1 = self.tmp(f"{n}*{va}" if n == 2 else f"{n}*{va}**{n - 1}")
        d2 = None
        if self.order >= 2:
            d2 = self.tmp(f"{n * (n - 1)}" if n == 2 else f"{n * (n - 1)}*{va}**{n - 2}")
        return self._chain(arg, v, d1, d2)


def _divzero(value):
    raise DivisionNearZero(f"denominator magnitude {abs(value):.3g} below {DIV_EPS:g}")


class JetKernel:
    """Compiled evaluator of several expressions and their Wirtinger jets.

    ``slots`` maps ``(kind, index)`` to a position in the coordinate vector
    ``zeta``.  Calling the kernel returns ``(values, grad, hess)`` where
    ``grad[e, k]`` is the derivative of expression ``e`` with respect to
    ``zeta_k`` for ``k < n`` and to ``conj(zeta_{k-n})`` for ``k >= n``,
    and ``hess`` is the matching ``2n x 2n`` block (``None`` below order 2).
    """

    def __init__(self, exprs, slots, order=1):
        self.exprs = tuple(exprs)
        self.slots = dict(slots)
        self.n = len(set(self.slots.values()))
        self.order = order
        em = _Emitter(self.slots, self.n, order)
        outs = [em.emit(e) for e in self.exprs]
        n2 = 2 * self.n
        body = list(em.lines)
        body.append("    V = [" + ", ".join(o[0] for o in outs) + "]")
        if order >= 1:
            rows = []
            for _, g, _ in outs:
                rows.append("[" + ", ".join(g.get(k) or "0j" for k in range(n2)) + "]")
            body.append("    G = [" + ", ".join(rows) + "]")
        else:
            body.append("    G = None")
        if order >= 2:
            mats = []
            for _, _, h in outs:
                rws = []
                for k in range(n2):
                    ent = []
                    for l in range(n2):
                        ent.append(h.get((min(k, l), max(k, l))) or "0j")
                    rws.append("[" + ", ".join(ent) + "]")
                mats.append("[" + ", ".join(rws) + "]")
            body.append("    H = [" + ", ".join(mats) + "]")
        else:
            body.append("    H = None")
        body.append("    return V, G, H")
        self.source = "def _kernel(x, xc):\n" + "\n".join(body) + "\n"
        ns = {
            "_cexp": cmath.exp,
            "_ccos": cmath.cos,
            "_csin": cmath.sin,
            "_divzero": _divzero,
            **em.consts,
        }
        exec(compile(self.source, "<crfol-jet>", "exec"), ns)
        self._fn = ns["_kernel"]

    def __call__(self, zeta):
        x = [complex(v) for v in zeta]
        xc = [v.conjugate() for v in x]
        V, G, H = self._fn(x, xc)
        vals = np.array(V, dtype=complex)
        grad = None if G is None else np.array(G, dtype=complex).reshape(len(V), 2 * self.n)
        hess = None if H is None else np.array(H, dtype=complex).reshape(len(V), 2 * self.n, 2 * self.n)
        return vals, grad, hess


def problem_slots(l: int, m: int, with_w=True) -> dict:
    slots = {("z", i + 1): i for i in range(l)}
    if with_w:
        slots.update({("w", j + 1): l + j for j in range(m)})
    return slots


@lru_cache(maxsize=512)
def _cached_kernel(exprs, l, m, order):
    return JetKernel(exprs, problem_slots(l, m), order)


@lru_cache(maxsize=512)
def _cached_path_kernel(exprs, order):
    return JetKernel(exprs, {("t", 0): 0}, order)


def path_jets(exprs, t: float):
    """Values and t-derivatives of path expressions at real ``t``."""
    vals, grad, _ = _cached_path_kernel(tuple(exprs), 1)([complex(t)])
    return vals, grad[:, 0]


# --------------------------------------------------------------------------
# Jet2


@dataclass(frozen=True)
class Jet2:
    value: float
    dz: np.ndarray
    dw: np.ndarray
    h_zbar_z: np.ndarray
    h_zbar_w: np.ndarray
    h_wbar_z: np.ndarray
    h_wbar_w: np.ndarray

    @property
    def dzbar(self) -> np.ndarray:
        return self.dz.conj()

    @property
    def dwbar(self) -> np.ndarray:
        return self.dw.conj()


def jet2(e: Expression, x: Point) -> Jet2:
    """Value, first and mixed second Wirtinger derivatives of a real expression."""
    l, m = len(x.z), len(x.w)
    for kind, idx in variables(e):
        if kind == "t" or idx > (l if kind == "z" else m):
            raise UnknownVariable(f"{kind}{idx} not available at a point with l={l}, m={m}")
    vals, grad, hess = _cached_kernel((e,), l, m, 2)(x.zeta)
    value = vals[0]
    if abs(value.imag) >= REAL_TOL * (1 + abs(value)):
        raise NotRealValued(f"imaginary part {value.imag:.3g} at a point where real values are required")
    n = l + m
    g, h = grad[0], hess[0]
    return Jet2(
        value=float(value.real),
        dz=g[:l].copy(),
        dw=g[l:n].copy(),
        h_zbar_z=h[n : n + l, :l].copy(),
        h_zbar_w=h[n : n + l, l:n].copy(),
        h_wbar_z=h[n + l :, :l].copy(),
        h_wbar_w=h[n + l :, l:n].copy(),
    )
