"""Monte Carlo campaigns: strong and weak error, limit laws, density checks.

Paths are processed in fixed-size chunks of consecutive streams.  A chunk is
a pure function of (model, grid, seed, streams), so the concatenated
per-path arrays, and every statistic computed from them, do not depend on
how many worker processes run the chunks.

When a model's exact solution depends on W_t alone and its first variation
is explicit (GBM, driftless ConstDiff), terminal quantities are computed
from the coarse points only.  Coarse Brownian values do not depend on the
refinement factor, so this gives the same numbers as the refined grid up to
rounding in the Σ exponent.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import edgeworth as ew
from . import errorproc as ep
from . import limitlaw as ll
from . import malliavin as ml
from .model import DiffusionModel, builtin_model
from .pathsim import (TimeGrid, affine_euler, affine_explicit, sample_brownian, simulate)

CHUNK = 8192
PATH_BUDGET = 1 << 21          # doubles per (P, N+1) array in one batch
PRED_STREAM = 1 << 40          # stream offset of the prediction sample
FAST_KINDS = {"terminal", "studentized", "second", "variance"}


def _model(spec) -> DiffusionModel:
    if isinstance(spec, DiffusionModel):
        return spec
    kind, params = spec
    return builtin_model(kind, params)


def _grid(n, m, T) -> TimeGrid:
    return TimeGrid(n, m, tuple(sorted({float(T), 1.0})))


def _fast_ok(mdl: DiffusionModel, kinds) -> bool:
    return mdl.pointwise_exact and mdl.constant_variation and set(kinds) <= FAST_KINDS


def path_stats(spec, n, m, T, seed, start, stop, kinds, variant="corrected",
               resolution="auto") -> dict:
    """Per-path statistics for streams start..stop-1.

    kinds: terminal (X_T, X^n_T, Σ_T), variance (V_T, S_T), studentized
    (V_T/√S_T), second (√n(V_T − V̄_T) and its predicted moments), leading
    (sup_t |V − V̄|), clt (M_T, A(1)_T, A(2)_T, W_T and ∫u, ∫v2).
    """
    mdl = _model(spec)
    grid = _grid(n, m, T)
    if resolution == "base" or (resolution == "auto" and _fast_ok(mdl, kinds)):
        grid = grid.base_grid()
    J = int(grid.T_index[list(grid.T_points).index(min(grid.T_points, key=lambda s: abs(s - T)))])
    per = max(1, PATH_BUDGET // (grid.N + 1))
    out: dict = {}

    def put(k, v):
        out.setdefault(k, []).append(np.asarray(v, dtype=float))

    rn = np.sqrt(n)
    for a in range(start, stop, per):
        b = min(stop, a + per)
        cp = simulate(mdl, grid, seed, np.arange(a, b))
        put("flag", cp.flags)
        V = None
        if kinds & {"variance", "studentized", "second", "leading"}:
            V = rn * (cp.X_euler - cp.X_ref)
        if "terminal" in kinds:
            put("X_T", cp.X_ref[:, J])
            put("Xn_T", cp.X_euler[:, J])
            put("Sigma_T", cp.Sigma[:, J])
        if kinds & {"variance", "studentized"}:
            _, C = ll.kernel_and_C(cp, J)
            S = cp.Sigma[:, J] ** 2 * C
            put("V_T", V[:, J])
            put("S_T", S)
            if "studentized" in kinds:
                with np.errstate(all="ignore"):
                    put("Z", V[:, J] / np.sqrt(S))
        if "second" in kinds:
            Vbar, _ = ep.leading_term(cp)
            put("D", rn * (V[:, J] - Vbar[:, J]))
            pr = ll.profile(cp, grid.fine_times[J], variant)
            put("pred_mean", pr.Sigma_T * pr.mu)
            put("pred_sq", pr.Sigma_T ** 2 * (pr.mu ** 2 + pr.Theta["22"]))
        if "leading" in kinds:
            Vbar, _ = ep.leading_term(cp)
            put("sup_dev", np.max(np.abs(V - Vbar), axis=1))
        if "clt" in kinds:
            pieces = ep.clt_pieces(cp, J)
            for k, v in pieces.items():
                put(k, v)
            co = ll.clt_coefficients(cp, J)
            w = ll.trapezoid_weights(grid.dt, J)
            for k in ("u11", "u13", "u22", "u33", "v2"):
                put("int_" + k, co[k] @ w)
    return {k: np.concatenate(v) for k, v in out.items()}


def _chunks(start, M):
    return [(a, min(start + M, a + CHUNK)) for a in range(start, start + M, CHUNK)]


def _run(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, *zip(*tasks)))


def _cat(parts):
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def collect(spec, n, m, T, seed, M, kinds, variant="corrected", workers=1, start=0,
            resolution="auto") -> dict:
    if isinstance(spec, DiffusionModel):
        workers = 1
    kinds = frozenset(kinds)
    tasks = [(spec, n, m, T, seed, a, b, kinds, variant, resolution) for a, b in _chunks(start, M)]
    return _cat(_run(path_stats, tasks, workers))


def _symbol_chunk(spec, n, m, T, seed, a, b, G, variant, weight):
    mdl = _model(spec)
    grid = _grid(n, m, T)
    per = max(1, PATH_BUDGET // (4 * (grid.N + 1)))
    out = []
    for s in range(a, b, per):
        cp = simulate(mdl, grid, seed, np.arange(s, min(b, s + per)))
        pr = ll.profile(cp, T, variant)
        sym = ml.h_coefficients(cp, pr, G=G, weight=weight)
        out.append({f.name: getattr(sym, f.name) for f in fields(sym)} | {"S": pr.S})
    return out


def symbol_sample(spec, n, m, T, seed, M, G=("C",), variant="corrected", weight="pathwise",
                  workers=1) -> ml.SymbolCoefficients:
    """symbols of M paths from the prediction stream range"""
    if isinstance(spec, DiffusionModel):
        workers = 1
    tasks = [(spec, n, m, T, seed, a, b, tuple(G), variant, weight)
             for a, b in _chunks(PRED_STREAM, M)]
    parts = [p for chunk in _run(_symbol_chunk, tasks, workers) for p in chunk]
    kw = {}
    for f in fields(ml.SymbolCoefficients):
        if f.name in ("G_names", "weight"):
            kw[f.name] = parts[0][f.name]
        else:
            kw[f.name] = np.concatenate([p[f.name] for p in parts])
    return ml.SymbolCoefficients(**kw)


# ------------------------------------------------------------------- tables

@dataclass
class Table:
    name: str
    columns: tuple
    rows: list
    meta: dict = field(default_factory=dict)

    def column(self, name):
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def write(self, directory) -> str:
        path = os.path.join(directory, self.name + ".csv")
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(self.columns)
            for r in self.rows:
                wr.writerow([_fmt(v) for v in r])
        return path


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    slope_se: float
    band: tuple   # 95% band for the slope


def rate_regression(x, y, se=None) -> RateFit:
    """log y = intercept + slope log x, weighted by the delta-method stderr of log y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise ValueError("need at least 3 points")
    if np.any(y <= 0) or np.any(x <= 0):
        raise ValueError("rate regression needs positive values")
    lx, ly = np.log(x), np.log(y)
    if se is None or np.all(np.asarray(se) == 0):
        coef, cov = np.polyfit(lx, ly, 1, cov="unscaled")
        resid = ly - np.polyval(coef, lx)
        s2 = resid @ resid / max(1, x.size - 2)
        cov = cov * s2
    else:
        sl = np.maximum(np.asarray(se, dtype=float) / y, 1e-300)
        coef, cov = np.polyfit(lx, ly, 1, w=1.0 / sl, cov="unscaled")
    sse = float(np.sqrt(max(cov[0, 0], 0.0)))
    q = stats.t.ppf(0.975, max(1, x.size - 2))
    return RateFit(float(coef[0]), float(coef[1]), sse, (float(coef[0] - q * sse), float(coef[0] + q * sse)))


# ------------------------------------------------------------ campaigns

@dataclass
class Campaign:
    model: object                  # (kind, params) or a DiffusionModel
    n_list: tuple
    m: int = 64
    M: int = 10_000
    T: float = 1.0
    seed: int = 1
    test_functions: tuple = ("poly:2",)
    variant: str = "corrected"
    pred_M: int = 4000
    pred_n: Optional[int] = None
    pred_m: int = 4
    workers: int = 1

    def symbols(self, G):
        n = self.pred_n or max(self.n_list)
        return symbol_sample(self.model, n, self.pred_m, self.T, self.seed, self.pred_M, G,
                             self.variant, workers=self.workers)


@dataclass(frozen=True)
class TestFunction:
    name: str
    f: Callable
    d1: Optional[Callable] = None
    d2: Optional[Callable] = None
    d3: Optional[Callable] = None


def test_function(name: str) -> TestFunction:
    """``poly:k`` for x^k, ``indicator:c`` for 1{x ≤ c}"""
    kind, _, arg = name.partition(":")
    if kind == "poly":
        k = int(arg)
        if k < 0:
            raise ValueError("polynomial degree must be ≥ 0")

        def d(j):
            coef = float(np.prod(np.arange(k - j + 1, k + 1))) if j <= k else 0.0
            return lambda x: coef * np.asarray(x, dtype=float) ** max(k - j, 0) if j <= k else 0 * x
        return TestFunction(name, d(0), d(1), d(2), d(3))
    if kind == "indicator":
        c = float(arg)
        return TestFunction(name, lambda x: (np.asarray(x) <= c).astype(float))
    raise ValueError(f"unknown test function {name!r}")


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def strong_error(c: Campaign, p: float = 2.0, predict: bool = True) -> tuple:
    """E[|U_T|^p]^{1/p} per n against n^{-1/2}(∫|v|^p p_n(v)dv)^{1/p}."""
    if p < 1:
        raise ValueError("p must be ≥ 1")
    dens = None
    if predict:
        sym = c.symbols(("Sigma",))
        dens = sym
    rows = []
    for n in c.n_list:
        r = collect(c.model, n, c.m, c.T, c.seed, c.M, {"terminal"}, c.variant, c.workers)
        U = r["Xn_T"] - r["X_T"]
        mp, sp = _mean_se(np.abs(U) ** p)
        err = mp ** (1 / p)
        se = err * sp / (p * mp) if mp > 0 else 0.0
        pred = np.nan
        if dens is not None:
            mv = ew.MarginalVDensity(dens, n)
            mom = mv.second_moment() if p == 2 else mv.moment(p)
            pred = n ** -0.5 * mom ** (1 / p)
        rows.append([n, c.M, err, se, pred, err / pred if pred == pred else np.nan, int(r["flag"].sum())])
    t = Table("strong_error", ("n", "M", "empirical", "stderr", "predicted", "ratio", "flagged"), rows)
    fit = rate_regression(t.column("n"), t.column("empirical"), t.column("stderr"))
    t.meta["fit"] = fit
    return t, fit


def weak_prediction(sym: ml.SymbolCoefficients, f: TestFunction) -> tuple:
    """n·(E f(X^n_T) − E f(X_T)) to leading order, with its MC stderr.

    The symbol must use G = (Σ_T, X_T); g(y, x) = y f'(x) is the z-derivative
    of f'(x)·y z and the last term is ½E[f''(X_T) S_T].
    """
    if f.d2 is None or f.d3 is None:
        raise ValueError(f"test function {f.name} lacks a second derivative")
    if sym.G_names != ("Sigma", "X"):
        raise ValueError("weak prediction needs G = ('Sigma', 'X')")
    y, x = sym.G[:, 0], sym.G[:, 1]
    f1, f2, f3 = f.d1(x), f.d2(x), f.d3(x)
    S = y * y * sym.C
    per = (y * f1 * sym.H2 + sym.H5[:, 0] * f1 + sym.H5[:, 1] * y * f2
           + (sym.H7[:, 0, 1] + sym.H7[:, 1, 0]) * f2 + sym.H7[:, 1, 1] * y * f3 + 0.5 * f2 * S)
    return _mean_se(per)


def weak_error(c: Campaign, f: TestFunction) -> tuple:
    if f.d2 is None:
        raise ValueError(f"test function {f.name} lacks a second derivative")
    cp_, cse = weak_prediction(c.symbols(("Sigma", "X")), f)
    rows = []
    for n in c.n_list:
        r = collect(c.model, n, c.m, c.T, c.seed, c.M, {"terminal"}, c.variant, c.workers)
        fe, fx = f.f(r["Xn_T"]), f.f(r["X_T"])
        d, se = _mean_se(fe - fx)
        rows.append([n, c.M, d, se, float(np.var(fe - fx, ddof=1)), float(np.var(fx, ddof=1)),
                     float(np.var(fe, ddof=1)), n * d, n * se, cp_ / n])
    t = Table("weak_error_" + f.name.replace(":", "_"),
              ("n", "M", "difference", "stderr", "var_difference", "var_exact", "var_euler",
               "n_difference", "n_stderr", "predicted"), rows)
    fit = rate_regression(t.column("n"), np.abs(t.column("difference")), t.column("stderr"))
    t.meta.update(fit=fit, predicted_constant=cp_, predicted_constant_se=cse,
                  empirical_constant=rows[-1][7], empirical_constant_se=rows[-1][8])
    return t, fit


def _cov_z(x, y, pred):
    xc, yc = x - x.mean(), y - y.mean()
    prod = xc * yc
    emp = float(prod.sum() / (x.size - 1))
    se = float(prod.std(ddof=1) / np.sqrt(x.size))
    return emp, se, (emp - pred) / se if se > 0 else (0.0 if emp == pred else np.inf)


def clt_validation(c: Campaign, n: Optional[int] = None) -> Table:
    """covariances of (M, A(1), A(2), W) at T against E∫u and E∫v²"""
    n = n or max(c.n_list)
    r = collect(c.model, n, c.m, c.T, c.seed, c.M, {"clt"}, c.variant, c.workers)
    E = {k: float(np.mean(r["int_" + k])) for k in ("u11", "u13", "u22", "u33", "v2")}
    ent = [("M", "M", E["u11"]), ("M", "A1", 0.0), ("M", "A2", E["u13"]), ("A1", "A1", E["u22"]),
           ("A1", "A2", 0.0), ("A2", "A2", E["u33"]), ("A1", "W", E["v2"]), ("M", "W", 0.0),
           ("A2", "W", 0.0)]
    rows = []
    for a, b, pred in ent:
        emp, se, z = _cov_z(r[a], r[b], pred)
        rows.append([f"{a}-{b}", n, c.M, emp, pred, se, z])
    return Table("clt_validation", ("entry", "n", "M", "empirical", "predicted", "stderr", "z"), rows)


def sup_cdf_distance(sample, cdf, grid=None) -> float:
    """max over a fixed grid of |F̂ − F|, F̂ the empirical CDF"""
    grid = np.linspace(-5, 5, 2001) if grid is None else grid
    s = np.sort(np.asarray(sample, dtype=float))
    Fh = np.searchsorted(s, grid, side="right") / s.size
    return float(np.max(np.abs(Fh - cdf(grid))))


def density_improvement(c: Campaign, h5_sign: str = "derived") -> tuple:
    sym = c.symbols(("C",))
    coeffs = ew.studentized_coeffs(sym.scalar(), sym.C, h5_sign)
    rows = []
    for n in c.n_list:
        r = collect(c.model, n, c.m, c.T, c.seed, c.M, {"studentized"}, c.variant, c.workers)
        Z = r["Z"][np.isfinite(r["Z"])]
        dens = ew.StudentizedDensity(coeffs, n)
        d0 = sup_cdf_distance(Z, stats.norm.cdf)
        d1 = sup_cdf_distance(Z, dens.cdf)
        dkw = float(np.sqrt(np.log(2 / 0.05) / (2 * Z.size)))
        rows.append([n, Z.size, d0, d1, int(d1 < d0), dkw])
    t = Table("density_improvement", ("n", "M", "d0", "d1", "improved", "dkw95"), rows)
    f0 = rate_regression(t.column("n"), t.column("d0"))
    f1 = rate_regression(t.column("n"), t.column("d1"))
    t.meta.update(coeffs=coeffs, fit_d0=f0, fit_d1=f1)
    return t, coeffs, f0, f1


def limit_variance(c: Campaign, n: Optional[int] = None) -> Table:
    n = n or max(c.n_list)
    r = collect(c.model, n, c.m, c.T, c.seed, c.M, {"variance"}, c.variant, c.workers)
    V = r["V_T"]
    var = float(np.var(V, ddof=1))
    se = float(((V - V.mean()) ** 2).std(ddof=1) / np.sqrt(V.size))
    pred, pse = _mean_se(r["S_T"])
    return Table("limit_variance", ("n", "M", "variance", "stderr", "predicted", "pred_stderr", "ratio"),
                 [[n, c.M, var, se, pred, pse, var / pred]])


def leading_term_sup(c: Campaign) -> Table:
    rows = []
    for n in c.n_list:
        r = collect(c.model, n, c.m, c.T, c.seed, c.M, {"leading"}, c.variant, c.workers)
        s = r["sup_dev"]
        rows.append([n, c.M, float(np.median(s)), float(np.percentile(s, 90))])
    return Table("leading_term_sup", ("n", "M", "median_sup", "p90_sup"), rows)


def second_order_check(c: Campaign, n: Optional[int] = None) -> Table:
    n = n or max(c.n_list)
    r = collect(c.model, n, c.m, c.T, c.seed, c.M, {"second"}, c.variant, c.workers)
    D = r["D"]
    mean, mse = _mean_se(D)
    var = float(np.var(D, ddof=1))
    vse = float(((D - mean) ** 2).std(ddof=1) / np.sqrt(D.size))
    pm = float(np.mean(r["pred_mean"]))
    pv = float(np.mean(r["pred_sq"])) - pm * pm
    return Table("second_order", ("n", "M", "mean", "mean_stderr", "pred_mean", "variance",
                                  "var_stderr", "pred_variance"),
                 [[n, c.M, mean, mse, pm, var, vse, pv]])


def affine_gap(m_list: Sequence[int], n: int = 8, M: int = 2000, seed: int = 1,
               d: float = 0.0) -> Table:
    """RMS gap at t = 1 between the explicit affine solution and its Euler scheme.

    Coefficients: c = −1 + ½cos(2πt), c̃ = sin(W), d constant, d̃ = 1 + ½W,
    on nested fine grids n·m.
    """
    rows = []
    for m in m_list:
        g = TimeGrid(n, m)
        p = sample_brownian(g, seed, np.arange(M))
        t = g.fine_times[None, :]
        W = p.W
        args = (-1 + 0.5 * np.cos(2 * np.pi * t), np.sin(W), d, 1 + 0.5 * W, 1.0, p)
        gap = affine_explicit(*args)[:, -1] - affine_euler(*args)[:, -1]
        rows.append([n * m, M, float(np.sqrt(np.mean(gap ** 2)))])
    return Table("affine_gap", ("steps", "M", "rms_gap"), rows)


# ------------------------------------------------------------ manifest

def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def write_manifest(directory, cfg: dict, seed: int, tables: dict, inputs: dict) -> str:
    man = {"config_hash": config_hash(cfg), "seed": seed,
           "inputs": {k: git_blob_hash(v) for k, v in sorted(inputs.items())},
           "tables": dict(sorted(tables.items()))}
    path = os.path.join(directory, "manifest.json")
    with open(path, "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ------------------------------------------------------------ raw tables

FUNCTIONAL_COLUMNS = ("stream", "T", "X", "X_euler", "Sigma", "V", "Vbar", "M", "N")


def functional_rows(spec, n, m, T_points, seed, start, stop, variant="corrected") -> list:
    """per-path values of the error functionals at each evaluation time"""
    mdl = _model(spec)
    grid = TimeGrid(n, m, tuple(T_points))
    per = max(1, PATH_BUDGET // (8 * (grid.N + 1)))
    rows = []
    for a in range(start, stop, per):
        streams = np.arange(a, min(stop, a + per))
        cp = simulate(mdl, grid, seed, streams)
        fn = ep.functionals(cp, variant)
        for i, s in enumerate(streams):
            for T, J in zip(grid.T_points, grid.T_index):
                rows.append([int(s), T, cp.X_ref[i, J], cp.X_euler[i, J], cp.Sigma[i, J], fn.V[i, J],
                             fn.Vbar[i, J], fn.M[i, J], fn.N[i, J]])
    return rows


def coefficient_rows(spec, n, m, T, seed, start, stop, variant="corrected") -> tuple:
    """(profile rows, symbol rows) for streams start..stop-1, symbol with G = (C, Σ_T, X_T)"""
    mdl = _model(spec)
    grid = _grid(n, m, T)
    per = max(1, PATH_BUDGET // (4 * (grid.N + 1)))
    prow, srow = [], []
    for a in range(start, stop, per):
        streams = np.arange(a, min(stop, a + per))
        cp = simulate(mdl, grid, seed, streams)
        pr = ll.profile(cp, T, variant)
        prow += ll.profile_rows(pr, streams)
        try:
            sym = ml.h_coefficients(cp, pr, G=ml.G_CHOICES)
        except ml.DegenerateModelError:
            continue
        q = len(sym.G_names)
        for i, s in enumerate(streams):
            srow.append([int(s), sym.H1[i], sym.H2[i], sym.H3[i], sym.H4[i], sym.H6[i]]
                        + [sym.H5[i, j] for j in range(q)] + [sym.H8[i, j] for j in range(q)]
                        + [sym.H7[i, j, k] for j in range(q) for k in range(q)])
    return prow, srow


SYMBOL_COLUMNS = (("stream", "H1", "H2", "H3", "H4", "H6")
                  + tuple(f"H5_{g}" for g in ml.G_CHOICES) + tuple(f"H8_{g}" for g in ml.G_CHOICES)
                  + tuple(f"H7_{g}_{h}" for g in ml.G_CHOICES for h in ml.G_CHOICES))


def run_rows(fn, spec, n, m, T, seed, M, variant, workers):
    if isinstance(spec, DiffusionModel):
        workers = 1
    tasks = [(spec, n, m, T, seed, a, b, variant) for a, b in _chunks(0, M)]
    return _run(fn, tasks, workers)
