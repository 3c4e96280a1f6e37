"""Check records and reports with JSON round-tripping."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

PASS, FAIL, VACUOUS, ERROR = "PASS", "FAIL", "VACUOUS", "ERROR"


def _clean(obj):
    """Make details JSON-safe: numpy scalars/arrays and complex numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _clean(obj.tolist())
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


@dataclass
class Check:
    name: str
    status: str
    residual: float | None = None
    tolerance: float | None = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.details = _clean(self.details)
        if self.residual is not None:
            self.residual = float(self.residual)

    @classmethod
    def against(cls, name, residual, tolerance, **details):
        status = PASS if residual <= tolerance else FAIL
        return cls(name, status, float(residual), float(tolerance), details)

    @classmethod
    def error(cls, name, exc: Exception, **details):
        return cls(name, ERROR, None, None, {"error": type(exc).__name__, "message": str(exc), **details})

    @property
    def ok(self) -> bool:
        return self.status in (PASS, VACUOUS)


@dataclass
class Report:
    command: str
    instance: str
    records: list = field(default_factory=list)
    wall_time: float = 0.0

    def add(self, check: Check) -> Check:
        self.records.append(check)
        return check

    @property
    def status(self) -> str:
        states = {r.status for r in self.records}
        if ERROR in states:
            return ERROR
        if FAIL in states:
            return FAIL
        return PASS

    @property
    def exit_code(self) -> int:
        return {PASS: 0, FAIL: 1, ERROR: 2}[self.status]

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "instance": self.instance,
            "status": self.status,
            "wall_time": self.wall_time,
            "records": [_clean(asdict(r)) for r in self.records],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data: dict) -> "Report":
        recs = [Check(**r) for r in data["records"]]
        return cls(data["command"], data["instance"], recs, data["wall_time"])

    @classmethod
    def from_json(cls, text: str) -> "Report":
        return cls.from_dict(json.loads(text))

    def to_table(self) -> str:
        lines = [f"{self.command} {self.instance}: {self.status}  ({self.wall_time:.2f} s)"]
        width = max([len(r.name) for r in self.records] + [5])
        for r in self.records:
            res = "-" if r.residual is None else f"{r.residual:.3e}"
            tol = "-" if r.tolerance is None else f"{r.tolerance:.1e}"
            note = r.details.get("message", "") if r.status == ERROR else ""
            lines.append(f"  {r.name:<{width}}  {r.status:<7}  residual {res:>10}  tol {tol:>7}  {note}")
        return "\n".join(lines)
