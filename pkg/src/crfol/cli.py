"""Command-line entry point: ``crfol check|trace|holonomy|foliate|verify <file>``."""

from __future__ import annotations

import argparse
import itertools
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import geometry as geo
from . import involutivity as inv
from . import rh
from . import tracer as tr
from .errors import CRFolError
from .problemfile import ProblemFile, load
from .report import ERROR, FAIL, PASS, VACUOUS, Check, Report

DEFAULT_TOLS = {
    "n_dimension": 0.0,
    "condition_I": 1e-3,
    "N_involutive": 1e-4,
    "lemma1": 1e-4,
    "trace": 1e-6,
    "holonomy": 1e-6,
    "foliate": 1e-6,
    "cr": 1e-3,
    "phi_cr": 1e-6,
    "lemma4": 1e-3,
    "convex": 1e-3,
}
MAIN_TOL = {"check": "condition_I", "trace": "trace", "holonomy": "holonomy", "foliate": "foliate", "verify": "cr"}
DEFAULT_STEPS = {"trace": 1000, "holonomy": 1000, "foliate": 100, "verify": 40}
DEFAULT_SAMPLES = {"check": 5, "foliate": 8, "verify": 3}


def corpus_path(name: str) -> Path:
    """Path of a bundled corpus instance such as ``example1.prob``."""
    return Path(str(resources.files("crfol") / "corpus" / name))


class Context:
    def __init__(self, pf: ProblemFile, args):
        self.pf = pf
        self.prob = pf.problem
        self.args = args
        self.rng = np.random.default_rng(args.rng_seed)

    def tol(self, name):
        if self.args.tol is not None and MAIN_TOL[self.args.command] == name:
            return self.args.tol
        return self.pf.tol(name, DEFAULT_TOLS[name])

    def steps(self):
        return self.args.steps or DEFAULT_STEPS[self.args.command]

    def samples(self):
        return self.args.samples or DEFAULT_SAMPLES[self.args.command]

    def seed(self):
        seeds = self.pf.seeds
        name = self.args.seed or ("main" if "main" in seeds else next(iter(seeds), None))
        if name not in seeds:
            raise KeyError(f"no seed named {name!r} in {self.pf.name}")
        return name, seeds[name]

    def path(self, prefer):
        paths = self.pf.paths
        name = self.args.path or (prefer if prefer in paths else next(iter(paths), None))
        if name not in paths:
            raise KeyError(f"no path named {name!r} in {self.pf.name}")
        return name, paths[name]

    def targets(self, seed):
        if self.pf.meshes:
            pts = next(iter(self.pf.meshes.values()))
            if self.args.samples:
                pts = pts[: self.args.samples]
        else:
            pts = [x.z for x in geo.sample_points(self.prob, self.samples(), self.rng)]
        return [geo.project_to_S(self.prob, z) for z in pts]


# --------------------------------------------------------------------------
# commands


def _aggregate(name, results, tol):
    """Fold per-sample checks into one record (worst residual, any failure fails)."""
    errors = [r for r in results if r.status == ERROR]
    if errors:
        return Check(name, ERROR, None, tol, {"samples": len(results), **errors[0].details})
    fails = [r for r in results if r.status == FAIL]
    real = [r for r in results if r.status != VACUOUS]
    if not real:
        return Check(name, VACUOUS, 0.0, tol, {"samples": len(results), "reason": results[0].details.get("reason", "")})
    worst = max(real, key=lambda r: r.residual if r.residual is not None else np.inf)
    status = FAIL if fails else PASS
    return Check(name, status, worst.residual, tol, {"samples": len(results), "failed": len(fails),
                                                     "worst": worst.details})


def _check_points(ctx: Context):
    """The named seed when ``--seed`` is given, otherwise random points of M."""
    if ctx.args.seed:
        _, seed = ctx.seed()
        return [tr.prepare_seed(ctx.prob, seed)]
    return geo.sample_points(ctx.prob, ctx.samples(), ctx.rng)


def cmd_check(ctx: Context, report: Report):
    prob = ctx.prob
    k = prob.l - prob.c
    per = {n: [] for n in ("n_dimension", "levi_nondegenerate", "N_involutive", "lemma1", "condition_I")}
    recipe = None
    for x in _check_points(ctx):
        ndim = geo.n_dimension(prob, x.z, x.w)
        per["n_dimension"].append(Check.against("n_dimension", abs(ndim - k), 0, dim=ndim, expected=k))
        ok, smin = geo.fiber_levi_nondegenerate(prob, x.z, x.w)
        per["levi_nondegenerate"].append(Check("levi_nondegenerate", PASS if ok else FAIL, smin, prob.rank_tol,
                                               {"smallest_singular_value": smin}))
        try:
            per["condition_I"].append(inv.check_condition_I(prob, x.z, x.w, tol=ctx.tol("condition_I")))
        except CRFolError as exc:
            per["condition_I"].append(Check.error("condition_I", exc))
        if not ok or ndim != k:
            reason = {"reason": "lift is not unique at this point"}
            for n in ("N_involutive", "lemma1"):
                per[n].append(Check(n, VACUOUS, 0.0, ctx.tol(n), reason))
            continue
        chart = inv.make_chart(prob, x.z, x.w)
        per["N_involutive"].append(inv.check_N_involutive(prob, chart, ctx.tol("N_involutive")))
        if recipe is None:
            recipe = inv.find_transverse_recipe(prob, x.z)
        worst = None
        for term in recipe.words_for("n"):
            for _, word in term:
                c = inv.check_lemma1(prob, chart, word, ctx.tol("lemma1"))
                if worst is None or (c.residual or 0) > (worst.residual or 0):
                    worst = c
        per["lemma1"].append(worst)
    levi = per.pop("levi_nondegenerate")
    fails = [r for r in levi if r.status == FAIL]
    report.add(Check("levi_nondegenerate", FAIL if fails else PASS, min(r.residual for r in levi), prob.rank_tol,
                     {"samples": len(levi), "failed": len(fails), "rule": "smallest singular value > tolerance"}))
    for name, results in per.items():
        report.add(_aggregate(name, results, ctx.tol(name)))
    if recipe is not None:
        report.add(Check("transverse_recipe", PASS, recipe.smin, None, {"terms": recipe.describe(), "note": recipe.note}))


def cmd_trace(ctx: Context, report: Report):
    seed_name, seed = ctx.seed()
    path_name, path = ctx.path("quarter")
    trace = tr.trace_leaf(ctx.prob, seed, path, ctx.steps())
    report.add(Check.against("trace", trace.max_residual, tr.TRACE_TOL, seed=seed_name, path=path_name,
                             steps=ctx.steps(), max_condition=float(np.max(trace.cond))))
    if ctx.args.out:
        trace.write_csv(ctx.args.out)
    if seed_name in ctx.pf.expects:
        expected = np.array([ctx.pf.expected(seed_name, z) for z in trace.z])
        err = float(np.max(np.abs(trace.w - expected)))
        report.add(Check.against("expect", err, ctx.tol("trace"), seed=seed_name))


def cmd_holonomy(ctx: Context, report: Report):
    seed_name, seed = ctx.seed()
    path_name, loop = ctx.path("loop")
    steps = ctx.steps()
    lifter = tr.Lifter(ctx.prob)
    fine = tr.holonomy(ctx.prob, seed, loop, steps, lifter=lifter)
    coarse = tr.holonomy(ctx.prob, seed, loop, max(1, steps // 2), lifter=lifter)
    report.add(Check.against("holonomy", fine, ctx.tol("holonomy"), seed=seed_name, loop=path_name, steps=steps,
                             half_steps_value=coarse, refinement_change=abs(fine - coarse)))


def _foliation(ctx: Context, stencil_h=None):
    seed_name, seed = ctx.seed()
    targets = ctx.targets(seed)
    return seed_name, tr.foliate(ctx.prob, seed, targets, steps=ctx.steps(), stencil_h=stencil_h)


def cmd_foliate(ctx: Context, report: Report):
    seed_name, fol = _foliation(ctx)
    rows = [{"z": r.z, "w": r.w, "residual": r.residual, "ok": r.ok, "error": r.error} for r in fol.rows]
    bad = [r for r in fol.rows if not r.ok]
    res = max((r.residual for r in fol.ok_rows), default=0.0)
    status = FAIL if bad or res > tr.TRACE_TOL else PASS
    report.add(Check("foliate", status, res, tr.TRACE_TOL, {"rows": rows, "failed": len(bad)}))
    if seed_name in ctx.pf.expects and fol.ok_rows:
        err = max(float(np.max(np.abs(r.w - ctx.pf.expected(seed_name, r.z)))) for r in fol.ok_rows)
        report.add(Check.against("expect", err, ctx.tol("foliate"), seed=seed_name))


def _guard(report, name, fn):
    try:
        report.add(fn())
    except CRFolError as exc:
        report.add(Check.error(name, exc))


def cmd_verify(ctx: Context, report: Report):
    prob = ctx.prob
    _, mesh = _foliation(ctx, stencil_h=tr.STENCIL_H)
    bad = [r for r in mesh.rows if not r.ok]
    if bad:
        report.add(Check("mesh", FAIL, None, None, {"failed": [r.error for r in bad]}))
    _guard(report, "cr_residual", lambda: Check.against("cr_residual", tr.cr_residual(prob, mesh), ctx.tol("cr")))

    tuples = rh.column_tuples(prob.m, prob.d)
    if len(tuples) < 2:
        report.add(Check("lemma4", VACUOUS, 0.0, ctx.tol("lemma4"), {"reason": "single column tuple"}))
    else:
        def lemma4():
            vals = {f"{I}-{J}": rh.lemma4_residual(prob, mesh, I, J) for I, J in itertools.combinations(tuples, 2)}
            return Check.against("lemma4", max(vals.values()), ctx.tol("lemma4"), pairs=vals)
        _guard(report, "lemma4", lemma4)

    if prob.d < prob.m and not ctx.pf.h:
        report.add(Check("phi_cr", VACUOUS, 0.0, ctx.tol("phi_cr"), {"reason": "no h.<tuple> keys for d < m"}))
    else:
        def phi_cr():
            norm = rh.normalize_C(prob, mesh, ctx.pf.h)
            vals = {str(I): rh.cr_check(norm.normalized(prob, mesh, I), prob, mesh) for I in tuples}
            return Check.against("phi_cr", max(vals.values()), ctx.tol("phi_cr"), per_tuple=vals,
                                 min_abs_C=norm.min_abs, h=norm.h)
        _guard(report, "phi_cr", phi_cr)

    if prob.d == 1:
        def convex():
            val = rh.convex_pairing(prob, mesh)
            tol = ctx.tol("convex")
            return Check("convex_pairing", PASS if val >= tol else FAIL, val, tol, {"rule": "minimum >= tolerance"})
        _guard(report, "convex_pairing", convex)


COMMANDS = {"check": cmd_check, "trace": cmd_trace, "holonomy": cmd_holonomy, "foliate": cmd_foliate,
            "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crfol", description="Certify and trace CR foliations of fibered manifolds.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("file", help="problem file, or the name of a bundled corpus instance")
    ap.add_argument("--seed", help="seed name (default: 'main' or the first seed)")
    ap.add_argument("--path", help="path name (default: 'quarter'/'loop' or the first path)")
    ap.add_argument("--steps", type=int, help="RK4 steps per trace")
    ap.add_argument("--samples", type=int, help="sample points (check) or targets (foliate/verify)")
    ap.add_argument("--tol", type=float, help="override the command's main tolerance")
    ap.add_argument("--rng-seed", type=int, default=0, help="seed for random sampling")
    ap.add_argument("--out", help="CSV output for trace")
    ap.add_argument("--json", action="store_true", help="emit the report as JSON")
    return ap


def resolve(file: str) -> Path:
    path = Path(file)
    if not path.exists() and corpus_path(file).exists():
        return corpus_path(file)
    if not path.exists() and corpus_path(file + ".prob").exists():
        return corpus_path(file + ".prob")
    return path


def run(args) -> Report:
    start = time.perf_counter()
    report = Report(args.command, Path(args.file).stem)
    try:
        pf = load(resolve(args.file))
        report.instance = pf.name
        COMMANDS[args.command](Context(pf, args), report)
    except (CRFolError, OSError, KeyError, ValueError) as exc:
        report.add(Check.error(args.command, exc))
    report.wall_time = time.perf_counter() - start
    return report


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    report = run(args)
    print(report.to_json() if args.json else report.to_table())
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
