"""Flat ``key = value`` problem files.

Recognised keys::

    l, m, c, d, tau                 integers
    p<i>, q<k>                      quoted expressions
    seed.<name> = "z=(...); w=(...)"
    path.<name> = "(expr_t, ...) on [t0, t1] project"
    expect.<name> = "(expr_z, ...)"   closed form w = f(z) for seed <name>
    tol.<check> = float
    mesh.<name> = "(z...); (z...); ..."   target points on S
    h.<i1>.<i2>... = "expr"          normalizer coefficients (used when d < m)
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import expr as ex
from .errors import CRFolError, MissingKey, ProblemFileError
from .geometry import Problem
from .tracer import PathSpec

_KEY = re.compile(r"[A-Za-z_][A-Za-z_0-9]*(?:\.[A-Za-z_0-9]+)*$")
_IMAG = re.compile(r"(\d|\.)\s*i\b")
_INTS = ("l", "m", "c", "d", "tau")


@dataclass
class ProblemFile:
    name: str
    problem: Problem
    seeds: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    expects: dict = field(default_factory=dict)
    tols: dict = field(default_factory=dict)
    meshes: dict = field(default_factory=dict)
    h: dict = field(default_factory=dict)
    source: str = ""

    def tol(self, check: str, default: float) -> float:
        return self.tols.get(check, default)

    def expected(self, seed: str, z) -> np.ndarray | None:
        exprs = self.expects.get(seed)
        if exprs is None:
            return None
        pt = ex.Point(z, np.zeros(0))
        return np.array([ex.evaluate(e, pt) for e in exprs])


def _constant_tuple(text: str) -> np.ndarray:
    """Evaluate a tuple of constant expressions, accepting literals such as ``0.5+2i``."""
    vals = ex.parse_tuple(_IMAG.sub(r"\1*i", text))
    return np.array([ex.evaluate(v) for v in vals], dtype=complex)


def parse_seed(text: str, l: int, m: int) -> ex.Point:
    parts = {}
    for chunk in text.split(";"):
        key, sep, val = chunk.partition("=")
        key = key.strip()
        if not sep or key not in ("z", "w"):
            raise ex.ExpressionSyntaxError(f"seed parts must be z=(...) and w=(...), got {chunk.strip()!r}", None, text)
        parts[key] = _constant_tuple(val)
    if set(parts) != {"z", "w"}:
        raise ex.ExpressionSyntaxError("seed needs both z and w", None, text)
    if parts["z"].size != l or parts["w"].size != m:
        raise ex.ExpressionSyntaxError(f"seed has wrong lengths (need {l} and {m})", None, text)
    return ex.Point(parts["z"], parts["w"])


def parse_mesh(text: str, l: int) -> list:
    pts = [_constant_tuple(chunk) for chunk in text.split(";") if chunk.strip()]
    for p in pts:
        if p.size != l:
            raise ex.ExpressionSyntaxError(f"mesh point needs {l} coordinates", None, text)
    return pts


def _read_pairs(text: str) -> list:
    """(line, key, value, value_column) for each assignment, values unquoted or as str."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw
        # strip comments outside quotes
        quoted = False
        for k, ch in enumerate(raw):
            if ch == '"':
                quoted = not quoted
            elif ch == "#" and not quoted:
                line = raw[:k]
                break
        if not line.strip():
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ProblemFileError("expected 'key = value'", lineno, 1)
        key = key.strip()
        if not _KEY.match(key):
            raise ProblemFileError(f"bad key {key!r}", lineno, 1)
        col = len(line) - len(val.lstrip()) + 1
        val = val.strip()
        if val.startswith('"'):
            if len(val) < 2 or not val.endswith('"') or '"' in val[1:-1]:
                raise ProblemFileError("unterminated string", lineno, col)
            val = ("str", val[1:-1])
        else:
            val = ("raw", val)
        out.append((lineno, key, val, col))
    return out


def loads(text: str, name: str = "problem") -> ProblemFile:
    pairs = _read_pairs(text)
    seen = {}
    for lineno, key, val, col in pairs:
        if key in seen:
            raise ProblemFileError(f"duplicate key {key!r}", lineno, 1)
        seen[key] = (lineno, val, col)

    def need(key):
        if key not in seen:
            raise MissingKey(f"missing required key {key!r}")
        return seen[key]

    def integer(key):
        lineno, (kind, val), col = need(key)
        if kind != "raw" or not re.fullmatch(r"[+-]?\d+", val):
            raise ProblemFileError(f"{key} must be an integer", lineno, col)
        return int(val)

    def string(key):
        lineno, (kind, val), col = need(key)
        if kind != "str":
            raise ProblemFileError(f"{key} must be a quoted string", lineno, col)
        return val

    dims = {k: integer(k) for k in _INTS}
    l, m, c, d = dims["l"], dims["m"], dims["c"], dims["d"]
    p = [string(f"p{i + 1}") for i in range(c)]
    q = [string(f"q{k + 1}") for k in range(d)]
    known = set(_INTS) | {f"p{i + 1}" for i in range(c)} | {f"q{k + 1}" for k in range(d)}

    def located(key, fn):
        lineno, _, col = seen[key]
        try:
            return fn()
        except (CRFolError, ValueError) as exc:
            if isinstance(exc, ProblemFileError):
                raise
            raise ProblemFileError(f"{key}: {exc}", lineno, col) from exc

    for key in known - set(_INTS):
        located(key, lambda: ex.parse(seen[key][1][1], (l, m)))
    prob = located("tau", lambda: Problem.from_strings(l, m, c, d, dims["tau"], p, q, name=name))
    pf = ProblemFile(name, prob, source=text)
    for key in seen:
        if key in known:
            continue
        lineno, (kind, val), col = seen[key]
        head, _, rest = key.partition(".")
        if head == "tol" and rest:
            try:
                pf.tols[rest] = float(val) if kind == "raw" else float("nan")
            except ValueError:
                raise ProblemFileError(f"{key} must be a number", lineno, col) from None
            if not np.isfinite(pf.tols[rest]) or pf.tols[rest] < 0:
                raise ProblemFileError(f"{key} must be a non-negative number", lineno, col)
            continue
        if head in ("seed", "path", "expect", "mesh", "h") and rest:
            text_val = string(key)
            if head == "seed":
                pf.seeds[rest] = located(key, lambda: parse_seed(text_val, l, m))
            elif head == "path":
                spec = located(key, lambda: PathSpec.parse(text_val))
                if len(spec.exprs) != l:
                    raise ProblemFileError(f"{key} needs {l} coordinates", lineno, col)
                pf.paths[rest] = spec
            elif head == "expect":
                exprs = located(key, lambda: ex.parse_tuple(text_val, (l, 0)))
                if len(exprs) != m:
                    raise ProblemFileError(f"{key} needs {m} components", lineno, col)
                pf.expects[rest] = exprs
            elif head == "mesh":
                pf.meshes[rest] = located(key, lambda: parse_mesh(text_val, l))
            else:
                idx = located(key, lambda: tuple(int(s) for s in rest.split(".")))
                if len(idx) != d or list(idx) != sorted(set(idx)) or not all(1 <= i <= m for i in idx):
                    raise ProblemFileError(f"{key} must name {d} increasing indices in 1..{m}", lineno, col)
                pf.h[idx] = located(key, lambda: ex.parse(text_val, (l, m)))
            continue
        raise ProblemFileError(f"unknown key {key!r}", lineno, 1)
    return pf


def load(path) -> ProblemFile:
    path = Path(path)
    return loads(path.read_text(), path.stem)
