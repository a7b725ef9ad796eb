"""Multi-run benchmark harness and its metrics.

A benchmark regenerates data and refits each method K times.  Run k builds
its dataset from a seed derived from (master seed, k), shared by every
method so methods are compared on identical data; fits draw their own seeds
from (master seed, k, method index).  Records merge in run order, so reports
are byte-identical regardless of worker count.  Wall-clock times are kept
out of report.json (they go to timings.json) to preserve that guarantee.

Metrics follow the strict term-matching convention: a run succeeds on an
equation only if the discovered term set equals the truth exactly, and
parameter RMSE is measured over the truth terms with missing terms scored
as zero.
"""

from __future__ import annotations

import concurrent.futures
import csv
import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__ as _tool_version
from .discover import (DiscoveryConfig, GpResult, SindyModel, equiv_c_fit,
                       equiv_r_fit, gp_evaluate, gp_fit, stlsq)
from .dynamics import (INTERNAL_DT, NoiseSpec, get_system, make_dataset)
from .integrate import rk4_final
from .library import canonicalize

DIVERGENCE_NORM = 1e6
NONCANONICAL = "<non-canonical>"

METHODS = ("sindy", "equiv-c", "equiv-r", "gp", "equiv-gp-r")


def derive_seed(master, *path):
    """Deterministic child seed for (master, *path)."""
    ss = np.random.SeedSequence((int(master),) + tuple(int(x) for x in path))
    return int(ss.generate_state(1, np.uint64)[0])


# -- term sets and success -------------------------------------------------------


def term_set(model, lib, min_coef=0.0):
    """Per-equation (sorted term labels, {label: coefficient}).

    Accepts a SindyModel, a GpResult, or a list of expressions.  Expressions
    that do not live in the library's span give the non-canonical sentinel,
    which never matches any truth set.  Coefficients with magnitude below
    min_coef are dropped first (a final guard; the fitters already threshold).
    """
    if isinstance(model, SindyModel):
        per_eq = [canonicalize_row(model.lib, row) for row in model.W]
    else:
        exprs = model.exprs if isinstance(model, GpResult) else list(model)
        per_eq = [canonicalize(e, lib) for e in exprs]
    out = []
    for coeffs in per_eq:
        if coeffs is None:
            out.append((NONCANONICAL, {}))
            continue
        kept = {k.label(): float(v) for k, v in coeffs.items()
                if abs(v) >= min_coef and v != 0.0}
        out.append((tuple(sorted(kept)), kept))
    return out


def canonicalize_row(lib, row):
    return {lib.terms[mu]: float(c) for mu, c in enumerate(row) if c != 0.0}


def success(discovered, truth):
    """Per-equation exact set equality plus the joint AND flag.

    discovered: per-eq label tuples (or the non-canonical sentinel);
    truth: per-eq iterables of labels.
    """
    flags = []
    for got, want in zip(discovered, truth):
        if got == NONCANONICAL:
            flags.append(False)
        else:
            flags.append(set(got) == set(want))
    return flags, all(flags)


# -- parameter RMSE ---------------------------------------------------------------


def _sq_err(coeffs, truth_eq):
    """Sum over the truth terms of (theta - theta_hat)^2; missing terms = 0."""
    return sum((truth_eq[label] - coeffs.get(label, 0.0)) ** 2
               for label in truth_eq)


def rmse_params(records, truth_coeffs, mode="successful", scope="joint"):
    """sqrt(sum_k ||theta - theta_hat^(k)||^2 / K) over the filtered runs.

    mode "successful" keeps only runs whose relevant success flag is set
    (joint flag for scope "joint", per-equation flag otherwise); with zero
    such runs the result is None (reported as N/A).  scope "per-eq" returns
    a list with one value per equation.
    """
    if scope == "per-eq":
        return [_rmse_one(records, truth_coeffs, mode, i)
                for i in range(len(truth_coeffs))]
    return _rmse_one(records, truth_coeffs, mode, None)


def _rmse_one(records, truth_coeffs, mode, eq):
    total = 0.0
    K = 0
    for rec in records:
        if rec["error"]:
            if mode == "successful":
                continue
            ok = False
        else:
            ok = rec["joint_success"] if eq is None else rec["eq_success"][eq]
        if mode == "successful" and not ok:
            continue
        K += 1
        eqs = range(len(truth_coeffs)) if eq is None else (eq,)
        for i in eqs:
            coeffs = rec["coefficients"][i] if not rec["error"] else {}
            total += _sq_err(coeffs, truth_coeffs[i])
    if K == 0:
        return None
    return float(np.sqrt(total / K))


# -- long-term prediction ---------------------------------------------------------


def long_term_error(model, system, test_ics, horizon, checkpoints,
                    internal_dt=INTERNAL_DT):
    """Squared prediction error of a learned field against the true flow.

    Both fields are integrated from each initial condition; at every
    checkpoint the per-state mean squared error is recorded.  States whose
    norm exceeds 1e6 (or go non-finite) are marked divergent from then on
    and excluded from the aggregates but counted.

    Returns {"checkpoints", "errors" (n_cp, n_ic), "diverged" (n_cp, n_ic)}.
    """
    checkpoints = list(checkpoints)
    if any(t < 0 or t > horizon + 1e-12 for t in checkpoints):
        raise ValueError("checkpoints must lie inside [0, horizon]")
    if sorted(checkpoints) != checkpoints:
        raise ValueError("checkpoints must be sorted ascending")
    oracle = system.oracle()
    X = np.atleast_2d(np.asarray(test_ics, dtype=float))
    B = X.shape[0]
    n_cp = len(checkpoints)
    errors = np.zeros((n_cp, B))
    diverged = np.zeros((n_cp, B), dtype=bool)
    ym = X.copy()
    yt = X.copy()
    t = 0.0
    bad = np.zeros(B, dtype=bool)
    with np.errstate(all="ignore"):
        for j, tc in enumerate(checkpoints):
            seg = tc - t
            if seg > 0:
                n = max(1, int(round(seg / internal_dt)))
                ym = rk4_final(model.h, ym, seg, n)
                yt = rk4_final(oracle.h, yt, seg, n)
                t = tc
            finite = np.isfinite(ym).all(axis=1)
            norm_ok = np.zeros(B, dtype=bool)
            norm_ok[finite] = (np.linalg.norm(ym[finite], axis=1)
                               <= DIVERGENCE_NORM)
            bad |= ~(finite & norm_ok)
            diverged[j] = bad
            diff = np.where(bad[:, None], 0.0, ym - yt)
            errors[j] = (diff * diff).mean(axis=1)
    return {"checkpoints": checkpoints, "errors": errors,
            "diverged": diverged}


# -- benchmark configuration and workers -------------------------------------------


@dataclass(frozen=True)
class BenchConfig:
    system: str
    methods: tuple = ("sindy", "equiv-c")
    runs: int = 20
    seed: int = 0
    noise: NoiseSpec = None          # None keeps the registry default
    discovery: DiscoveryConfig = None
    generators: tuple = None         # None keeps the registry generators
    horizon: float = None            # None means n_samples * dt
    n_checkpoints: int = 10
    ltp_ics: int = 5
    data: tuple = ()                 # ((key, value), ...) make_dataset overrides
    jobs: int = 1

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; expected {METHODS}")
        if self.runs < 1:
            raise ValueError("runs must be at least 1")


class _ExprField:
    """Minimal dynamics wrapper for integrating GP expression trees."""

    def __init__(self, exprs):
        self.exprs = exprs

    def h(self, X):
        return np.stack([gp_evaluate(e, X) for e in self.exprs], axis=-1)


def _fit_method(method, ds, lib, gens, dcfg):
    if method == "sindy":
        X, dX = ds.regression_arrays("train")
        W = stlsq(lib.evaluate(X), dX, dcfg.threshold, dcfg.max_rounds)
        return SindyModel(lib, W, provenance={"method": "sindy"})
    if method == "equiv-c":
        return equiv_c_fit(ds, lib, gens, dcfg)
    if method == "equiv-r":
        return equiv_r_fit(ds, lib, gens, dcfg)
    if method == "gp":
        return gp_fit(ds, dcfg)
    if method == "equiv-gp-r":
        lam = dcfg.lambda_symm if dcfg.lambda_symm is not None else 0.1
        return gp_fit(ds, dcfg, symmetry={"gens": list(gens),
                                          "eps": dcfg.eps, "lambda": lam})
    raise ValueError(f"unknown method {method!r}")


def _bench_worker(args):
    bc, k = args
    system = get_system(bc.system)
    gens = (system.generators if bc.generators is None
            else tuple(bc.generators))
    base_cfg = bc.discovery or DiscoveryConfig(
        threshold=system.data.threshold)
    ds = make_dataset(system, seed=derive_seed(bc.seed, k),
                      noise=bc.noise, **dict(bc.data))
    lib = system.library()
    truth_sets = [sorted(t.label() for t in s)
                  for s in system.truth_term_sets()]
    n_samples = ds.meta.get("n_samples", system.data.n_samples)
    horizon = bc.horizon if bc.horizon is not None else n_samples * ds.dt
    checkpoints = [horizon * (j + 1) / bc.n_checkpoints
                   for j in range(bc.n_checkpoints)]
    ics = np.array([tr.clean_states[0]
                    for tr in ds.test[:bc.ltp_ics]])
    records = []
    ltp = {}
    timings = {}
    for mi, method in enumerate(bc.methods):
        fit_seed = derive_seed(bc.seed, k, mi)
        dcfg = replace(base_cfg, seed=fit_seed,
                       gp=replace(base_cfg.gp, seed=fit_seed))
        t0 = time.perf_counter()
        err = ""
        model = None
        try:
            model = _fit_method(method, ds, lib, gens, dcfg)
        except Exception as exc:
            err = f"{type(exc).__name__}: {exc}"
        wall = time.perf_counter() - t0
        timings[method] = wall
        if err:
            d = system.dim
            records.append({"run": k, "seed": fit_seed, "method": method,
                            "term_sets": [[]] * d,
                            "coefficients": [{}] * d,
                            "eq_success": [False] * d,
                            "joint_success": False, "error": err})
            continue
        sets = term_set(model, lib, min_coef=dcfg.threshold)
        labels = [s for s, _ in sets]
        coeffs = [c for _, c in sets]
        flags, joint = success(labels, truth_sets)
        records.append({
            "run": k, "seed": fit_seed, "method": method,
            "term_sets": [list(s) if s != NONCANONICAL else NONCANONICAL
                          for s in labels],
            "coefficients": coeffs,
            "eq_success": flags, "joint_success": joint, "error": ""})
        field = model if isinstance(model, SindyModel) else \
            _ExprField(model.exprs)
        if len(ics):
            ltp[method] = long_term_error(field, system, ics, horizon,
                                          checkpoints)
    return records, ltp, timings, checkpoints


# -- aggregation and reports -------------------------------------------------------


def aggregate_records(records, truth_coeffs):
    """Per-method aggregates recomputable from the stored records."""
    d = len(truth_coeffs)
    methods = []
    for rec in records:
        if rec["method"] not in methods:
            methods.append(rec["method"])
    out = {}
    for m in methods:
        recs = [r for r in records if r["method"] == m]
        n = len(recs)
        succ = {f"eq{i+1}": sum(r["eq_success"][i] for r in recs) / n
                for i in range(d)}
        succ["all"] = sum(r["joint_success"] for r in recs) / n
        per_s = rmse_params(recs, truth_coeffs, "successful", "per-eq")
        per_a = rmse_params(recs, truth_coeffs, "all", "per-eq")
        out[m] = {
            "n_runs": n,
            "n_failed": sum(bool(r["error"]) for r in recs),
            "success": succ,
            "rmse_successful": {
                **{f"eq{i+1}": per_s[i] for i in range(d)},
                "all": rmse_params(recs, truth_coeffs, "successful",
                                   "joint")},
            "rmse_all": {
                **{f"eq{i+1}": per_a[i] for i in range(d)},
                "all": rmse_params(recs, truth_coeffs, "all", "joint")},
        }
    return out


def _aggregate_ltp(ltp_parts):
    """Merge per-run LTP pieces into per-checkpoint mean/std/counters."""
    out = {}
    for method, parts in ltp_parts.items():
        errs = np.concatenate([p["errors"] for p in parts], axis=1)
        div = np.concatenate([p["diverged"] for p in parts], axis=1)
        cps = parts[0]["checkpoints"]
        mean, std, nval = [], [], []
        for j in range(len(cps)):
            ok = ~div[j]
            vals = errs[j][ok]
            mean.append(float(vals.mean()) if vals.size else None)
            std.append(float(vals.std()) if vals.size else None)
            nval.append(int(vals.size))
        out[method] = {"checkpoints": [float(t) for t in cps],
                       "mean": mean, "std": std,
                       "divergent": [int(div[j].sum())
                                     for j in range(len(cps))],
                       "n": nval}
    return out


def run_benchmark(bc):
    """K data-regeneration + discovery runs per method, merged in run order."""
    system = get_system(bc.system)
    truth_coeffs = [{t.label(): v for t, v in
                     canonicalize(rhs, system.library()).items()}
                    for rhs in system.rhs]
    args = [(bc, k) for k in range(bc.runs)]
    t_start = time.perf_counter()
    if bc.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=bc.jobs) as pool:
            results = list(pool.map(_bench_worker, args))
    else:
        results = [_bench_worker(a) for a in args]
    total = time.perf_counter() - t_start
    records = [rec for recs, _, _, _ in results for rec in recs]
    ltp_parts = {}
    for _, ltp, _, _ in results:
        for m, part in ltp.items():
            ltp_parts.setdefault(m, []).append(part)
    timings = {m: [res[2].get(m) for res in results]
               for m in bc.methods}
    report = {
        "format": "symodes-benchmark-report",
        "format_version": 1,
        "tool_version": _tool_version,
        "system": bc.system,
        "config": _config_snapshot(bc),
        "truth": {"term_sets": [sorted(c) for c in truth_coeffs],
                  "coefficients": truth_coeffs},
        "records": records,
        "aggregates": aggregate_records(records, truth_coeffs),
        "ltp": _aggregate_ltp(ltp_parts),
    }
    report["timings"] = {"total_seconds": total, "per_run": timings}
    return report


def _config_snapshot(bc):
    def clean(v):
        if isinstance(v, (NoiseSpec,)):
            return {"kind": v.kind, "sigma": v.sigma}
        if isinstance(v, DiscoveryConfig):
            return json.loads(json.dumps(v, default=lambda o: o.__dict__))
        if hasattr(v, "to_config"):
            return v.to_config()
        if isinstance(v, tuple):
            return [clean(x) for x in v]
        return v
    # jobs is an execution knob: results must not depend on it
    return {k: clean(v) for k, v in bc.__dict__.items() if k != "jobs"}


def _fmt_cell(v):
    if v is None:
        return "NA"
    return repr(float(v))


def emit_report(report, outdir):
    """Write report.json, tables.csv, ltp.csv (deterministic) + timings.json."""
    os.makedirs(outdir, exist_ok=True)
    timings = report.pop("timings", None)
    with open(os.path.join(outdir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    if timings is not None:
        with open(os.path.join(outdir, "timings.json"), "w") as fh:
            json.dump(timings, fh, indent=2, sort_keys=True)
            fh.write("\n")
        report["timings"] = timings
    d = len(report["truth"]["term_sets"])
    eq_cols = [f"eq{i+1}" for i in range(d)]
    with open(os.path.join(outdir, "tables.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "metric"] + eq_cols + ["all"])
        for m, agg in sorted(report["aggregates"].items()):
            for metric in ("success", "rmse_successful", "rmse_all"):
                row = [m, metric]
                row += [_fmt_cell(agg[metric][c]) for c in eq_cols + ["all"]]
                w.writerow(row)
    with open(os.path.join(outdir, "ltp.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "t", "mean", "std", "divergent", "n"])
        for m, curve in sorted(report["ltp"].items()):
            for j, t in enumerate(curve["checkpoints"]):
                w.writerow([m, _fmt_cell(t), _fmt_cell(curve["mean"][j]),
                            _fmt_cell(curve["std"][j]),
                            curve["divergent"][j], curve["n"][j]])


def load_report(path):
    """Load report.json and re-derive the aggregates as a self-audit."""
    with open(path) as fh:
        report = json.load(fh)
    truth_coeffs = report["truth"]["coefficients"]
    recomputed = aggregate_records(report["records"], truth_coeffs)
    if recomputed != report["aggregates"]:
        raise ValueError("stored aggregates do not match the records")
    return report
