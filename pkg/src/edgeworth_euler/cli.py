"""Command-line front end.

    edgeworth-euler SUBCOMMAND CONFIG [--seed S] [--outdir DIR] [--workers K]

Subcommands: simulate, coefficients, density, validate, rates, report.
EDGEWORTH_EULER_OUTDIR and EDGEWORTH_EULER_WORKERS override the config;
flags override both.  Exit status 0 on success, 1 when an acceptance check
fails, 2 on usage or configuration errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import edgeworth as ew
from . import experiments as ex
from . import limitlaw as ll
from . import malliavin as ml
from . import rng
from .config import ConfigError, RunConfig, parse_config
from .model import builtin_model, check_derivatives
from .pathsim import TimeGrid, sample_brownian, simulate

ENV_OUTDIR = "EDGEWORTH_EULER_OUTDIR"
ENV_WORKERS = "EDGEWORTH_EULER_WORKERS"


class UsageError(Exception):
    pass


def _campaign(cfg: RunConfig) -> ex.Campaign:
    return ex.Campaign(cfg.model_spec, cfg.n_list, cfg.m, cfg.M, max(cfg.T_points), cfg.seed,
                       cfg.test_functions, cfg.variant, cfg.pred_M, cfg.pred_n, cfg.pred_m, cfg.workers)


def _write_rows(path, columns, rows):
    ex.Table(os.path.splitext(os.path.basename(path))[0], tuple(columns), rows).write(os.path.dirname(path))
    return os.path.basename(path)


# ------------------------------------------------------------ subcommands

def cmd_simulate(cfg, out, _args):
    written = {}
    for n in cfg.n_list:
        parts = ex.run_rows(ex.functional_rows, cfg.model_spec, n, cfg.m, cfg.T_points, cfg.seed,
                            cfg.M, cfg.variant, cfg.workers)
        name = f"functionals_n{n}"
        written[name] = _write_rows(os.path.join(out, name + ".csv"), ex.FUNCTIONAL_COLUMNS,
                                    [r for p in parts for r in p])
    return 0, written


def cmd_coefficients(cfg, out, _args):
    n = cfg.pred_n or max(cfg.n_list)
    written = {}
    for i, T in enumerate(cfg.T_points):
        parts = ex.run_rows(ex.coefficient_rows, cfg.model_spec, n, cfg.m, T, cfg.seed, cfg.M,
                            cfg.variant, cfg.workers)
        prof = [r for p in parts for r in p[0]]
        sym = [r for p in parts for r in p[1]]
        written[f"profile_T{i}"] = _write_rows(os.path.join(out, f"profile_T{i}.csv"), ll.PROFILE_COLUMNS, prof)
        if sym:
            written[f"symbol_T{i}"] = _write_rows(os.path.join(out, f"symbol_T{i}.csv"), ex.SYMBOL_COLUMNS, sym)
        else:
            print(f"note: symbol undefined at T={T} (zero kernel); only the profile was written",
                  file=sys.stderr)
    return 0, written


def cmd_density(cfg, out, args):
    c = _campaign(cfg)
    n = args.n or max(cfg.n_list)
    try:
        if args.kind == "studentized":
            sym = c.symbols(("C",))
            dens = ew.StudentizedDensity(ew.studentized_coeffs(sym.scalar(), sym.C), n)
            y = np.linspace(-5, 5, 2001)
            phi, corr, tot = dens.parts(y)
            cols, rows = ("y", "phi", "correction", "total"), np.column_stack([y, phi, corr, tot])
        elif args.kind == "marginal":
            sym = c.symbols(("Sigma",))
            dens = ew.MarginalVDensity(sym, n)
            s = float(np.sqrt(np.max(sym.Sigma_T ** 2 * sym.C)))
            v = np.linspace(-6 * s, 6 * s, 2001)
            o, corr, se = dens.parts(v)
            cols, rows = ("v", "order0", "correction", "total", "stderr"), np.column_stack([v, o, corr, o + corr, se])
        else:
            sym = c.symbols(("C",))
            dens = ew.PairDensity(sym, n)
            if dens.deterministic:
                z = np.linspace(-6, 6, 1201) * np.sqrt(dens.C0)
                o, corr = dens.parts_z(z)
                x = np.full_like(z, dens.C0)
                rows = np.column_stack([z, x, o, corr, o + corr])
            else:
                lo, hi = np.exp(np.quantile(dens.u, [0.01, 0.99]))
                x = np.exp(np.linspace(np.log(lo), np.log(hi), 41))
                z = np.linspace(-6, 6, 241) * np.sqrt(np.median(sym.C))
                o, corr = dens.parts(z, x)
                Z, X = np.meshgrid(z, x, indexing="ij")
                rows = np.column_stack([Z.ravel(), X.ravel(), o.ravel(), corr.ravel(), (o + corr).ravel()])
            cols = ("z", "x", "order0", "correction", "total")
    except ml.DegenerateModelError as exc:
        raise UsageError(f"density undefined for this model: {exc}") from None
    name = f"density_{args.kind}_n{n}"
    return 0, {name: _write_rows(os.path.join(out, name + ".csv"), cols, rows.tolist())}


@dataclass
class Check:
    name: str
    value: float
    limit: float
    ok: bool
    note: str = ""


def invariant_suite(cfg: RunConfig, quick: bool = False) -> list:
    """model, grid, rng, Malliavin, symbol and density invariants with measured values"""
    out = []
    mdl = builtin_model(*cfg.model_spec)
    x0 = mdl.x0
    xs = np.linspace(0.5 * x0, 2 * x0, 100) if x0 > 0 else np.linspace(x0 - 1, x0 + 1, 100)
    rep = check_derivatives(mdl, xs)
    worst = max(rep.mismatch.values())
    out.append(Check("model.derivatives", worst, max(rep.threshold.values()), rep.ok))
    if mdl.has_exact:
        v = float(np.max(np.abs(mdl.exact_solution(np.zeros(3), np.zeros(3)) - x0)))
        out.append(Check("model.exact_at_0", v, 0.0, v == 0.0))

    n0 = min(cfg.n_list)
    pa = sample_brownian(TimeGrid(n0, 4), cfg.seed, np.arange(16))
    pb = sample_brownian(TimeGrid(n0, 8), cfg.seed, np.arange(16))
    v = float(np.max(np.abs(pa.W[:, ::4] - pb.W[:, ::8])))
    out.append(Check("pathsim.coarse_nesting", v, 0.0, v == 0.0))
    u1 = rng.normals(cfg.seed, np.arange(4), rng.BASE, 8)
    u2 = rng.normals(cfg.seed, np.arange(4), rng.BASE, 8)
    out.append(Check("rng.reproducible", float(np.max(np.abs(u1 - u2))), 0.0, bool(np.array_equal(u1, u2))))

    h = [float(ew.hermite(3, 0.0)), float(ew.hermite(3, 1.0)), float(ew.hermite(5, 1.0))]
    v = abs(h[0]) + abs(h[1] + 2) + abs(h[2] - 6)
    out.append(Check("edgeworth.hermite_values", v, 0.0, v == 0.0))

    lin = builtin_model("LinearSDE", (0.1, -0.3, 0.2, 0.4, 1.0))
    g = TimeGrid(8, 32 if quick else 128)
    cp = simulate(lin, g, cfg.seed, np.arange(4))
    gc = ml.gradient_check(cp, np.linspace(2, g.N - 2, 12).astype(int))
    for k in ("X", "Sigma", "C"):
        out.append(Check(f"malliavin.D{k}_bump", gc[k], 1e-3, gc[k] <= 1e-3))
    out.append(Check("malliavin.DDC_bump", gc["DDC"], 5e-2, gc["DDC"] <= 5e-2,
                     "quick grid, informational" if quick else ""))
    gbm = builtin_model("GBM", (0.05, 0.3, 1.0))
    cpg = simulate(gbm, TimeGrid(8, 16), cfg.seed, np.arange(4))
    d = ml.derivatives(cpg, ml.first_variation(cpg), cpg.grid.N, "discrete")
    v = float(np.max(np.abs(d.DC)))
    out.append(Check("malliavin.gbm_DC_zero", v, 1e-10, v <= 1e-10))

    Pm = 64 if quick else 512
    cpm = simulate(mdl, TimeGrid(max(cfg.n_list), min(cfg.m, 8)), cfg.seed, np.arange(Pm))
    pr = ll.profile(cpm, 1.0, cfg.variant)
    out.append(Check("limitlaw.psd_violations", float(pr.psd_violations.sum()), 0.0,
                     int(pr.psd_violations.sum()) == 0))
    try:
        sym = ml.h_coefficients(cpm, pr, G=("C",))
    except ml.DegenerateModelError as exc:
        out.append(Check("malliavin.symbol_identities", 0.0, 1e-8, True, f"skipped: {exc}"))
        return out

    def rel(a, b):
        return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)))

    s = sym.scalar()
    v = max(rel(s["H4"], s["H5"] / 2) if np.any(s["H5"]) else float(np.max(np.abs(s["H4"]))),
            rel(4 * s["H6"], s["H7"]) if np.any(s["H7"]) else float(np.max(np.abs(s["H6"]))),
            rel(s["H7"], s["H8"]) if np.any(s["H8"]) else float(np.max(np.abs(s["H7"]))))
    out.append(Check("malliavin.symbol_identities", v, 1e-8, v <= 1e-8))

    n = max(cfg.n_list)
    st = ew.StudentizedDensity(ew.studentized_coeffs(s, sym.C), n)
    i0, i1 = st.integral()
    out.append(Check("edgeworth.studentized_integral", abs(i0 - 1), 1e-6, abs(i0 - 1) <= 1e-6))
    out.append(Check("edgeworth.studentized_correction", abs(i1), 1e-6, abs(i1) <= 1e-6))
    pair = ew.PairDensity(sym, n)
    i0, i1 = pair.integrals()
    out.append(Check("edgeworth.pair_integral", abs(i0 - 1), 1e-6, abs(i0 - 1) <= 1e-6))
    out.append(Check("edgeworth.pair_correction", abs(i1), 1e-4, abs(i1) <= 1e-4))
    symS = ml.h_coefficients(cpm, pr, G=("Sigma",))
    i0, i1 = ew.MarginalVDensity(symS, n).integrals()
    out.append(Check("edgeworth.marginal_integral", abs(i0 - 1), 1e-6, abs(i0 - 1) <= 1e-6))
    out.append(Check("edgeworth.marginal_correction", abs(i1), 1e-4, abs(i1) <= 1e-4))

    t = ex.affine_gap([16, 32], n=8, M=500, seed=cfg.seed)
    r = t.rows[0][2] / t.rows[1][2]
    out.append(Check("pathsim.affine_gap_ratio", r, 2.0, abs(r / 2 - 1) <= 0.2))
    return out


def cmd_validate(cfg, out, args):
    checks = invariant_suite(cfg, quick=args.quick)
    rows = [[c.name, c.value, c.limit, int(c.ok), c.note] for c in checks]
    for c in checks:
        note = f"  ({c.note})" if c.note else ""
        print(f"{'PASS' if c.ok else 'FAIL'}  {c.name}  measured={c.value:.3g}  limit={c.limit:.3g}{note}")
    name = "validate"
    written = {name: _write_rows(os.path.join(out, name + ".csv"), ("check", "value", "limit", "ok", "note"), rows)}
    return (0 if all(c.ok for c in checks) else 1), written


def _fits_rows(fits):
    return [[k, f.slope, f.intercept, f.slope_se, f.band[0], f.band[1]] for k, f in fits.items()]


def cmd_rates(cfg, out, _args):
    c = _campaign(cfg)
    tables, fits = [], {}
    mdl = builtin_model(*cfg.model_spec)
    for name in cfg.campaigns:
        if name == "strong":
            try:
                t, fit = ex.strong_error(c, cfg.p)
            except ml.DegenerateModelError:
                print("note: zero kernel, strong error reported without prediction", file=sys.stderr)
                t, fit = ex.strong_error(c, cfg.p, predict=False)
            tables.append(t)
            fits["strong_error"] = fit
        elif name == "weak":
            if not mdl.has_exact and cfg.m < 256:
                print(f"warning: fine-Euler reference with m={cfg.m} < 256; weak bias of the "
                      "reference may not be negligible", file=sys.stderr)
            for tf in cfg.test_functions:
                f = ex.test_function(tf)
                if f.d2 is None:
                    raise UsageError(f"weak error needs a twice differentiable test function, got {tf}")
                t, fit = ex.weak_error(c, f)
                tables.append(t)
                fits[t.name] = fit
        elif name == "clt":
            tables.append(ex.clt_validation(c))
        elif name == "density":
            t, _, f0, f1 = ex.density_improvement(c)
            tables.append(t)
            fits["density_d0"], fits["density_d1"] = f0, f1
        elif name == "variance":
            tables.append(ex.limit_variance(c))
        elif name == "leading":
            tables.append(ex.leading_term_sup(c))
        elif name == "second":
            tables.append(ex.second_order_check(c))
    written = {t.name: os.path.basename(t.write(out)) for t in tables}
    if fits:
        written["fits"] = _write_rows(os.path.join(out, "fits.csv"),
                                      ("table", "slope", "intercept", "slope_stderr", "band_lo", "band_hi"),
                                      _fits_rows(fits))
    return 0, written


def cmd_report(cfg, out, _args):
    found = {os.path.splitext(f)[0]: f for f in sorted(os.listdir(out)) if f.endswith(".csv")}
    return 0, found


COMMANDS = {"simulate": cmd_simulate, "coefficients": cmd_coefficients, "density": cmd_density,
            "validate": cmd_validate, "rates": cmd_rates, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgeworth-euler",
                                description="Euler error expansions: simulation, coefficients, densities and rate campaigns.")
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", help="JSON run configuration")
        s.add_argument("--seed", type=int)
        s.add_argument("--outdir")
        s.add_argument("--workers", type=int)
        if name == "density":
            s.add_argument("--kind", choices=("studentized", "marginal", "pair"), default="studentized")
            s.add_argument("--n", type=int)
        if name == "validate":
            s.add_argument("--quick", action="store_true", help="smaller grids for a fast smoke run")
    return p


def _resolve(cfg: RunConfig, args) -> RunConfig:
    outdir, workers = cfg.outdir, cfg.workers
    if os.environ.get(ENV_OUTDIR):
        outdir = os.environ[ENV_OUTDIR]
    if os.environ.get(ENV_WORKERS):
        try:
            workers = int(os.environ[ENV_WORKERS])
        except ValueError:
            raise UsageError(f"{ENV_WORKERS} must be an integer") from None
    if args.outdir:
        outdir = args.outdir
    if args.workers is not None:
        workers = args.workers
    if workers < 1:
        raise UsageError("worker count must be ≥ 1")
    seed = cfg.seed if args.seed is None else args.seed
    if not 0 <= seed < 2 ** 64:
        raise UsageError("seed must be in [0, 2^64)")
    return dataclasses.replace(cfg, outdir=outdir, workers=workers, seed=seed)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve(parse_config(args.config), args)
        os.makedirs(cfg.outdir, exist_ok=True)
        status, written = COMMANDS[args.command](cfg, cfg.outdir, args)
    except ConfigError as exc:
        for path, msg in exc.errors:
            print(f"config error at {path or '<root>'}: {msg}", file=sys.stderr)
        return 2
    except (UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    with open(args.config, "rb") as fh:
        data = fh.read()
    doc = dict(cfg.raw)
    doc["mc"] = dict(doc["mc"], seed=cfg.seed)
    if args.command == "report":
        tables = written
    else:
        tables = _merge_manifest(cfg.outdir, written)
    ex.write_manifest(cfg.outdir, doc, cfg.seed, tables, {"config": data})
    return status


def _merge_manifest(outdir, written):
    path = os.path.join(outdir, "manifest.json")
    tables = {}
    if os.path.exists(path):
        try:
            with open(path) as fh:
                tables = json.load(fh).get("tables", {})
        except (OSError, ValueError):
            tables = {}
    tables.update(written)
    return tables


if __name__ == "__main__":
    sys.exit(main())
