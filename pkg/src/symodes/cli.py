"""Command-line surface: generate, nullspace, check-symmetry, discover, benchmark.

Each subcommand reads an optional JSON config file, overlays any command-line
flags on top of it, validates the merged document against a strict schema
(unknown keys are rejected with the offending path), and then drives the
library modules.  Every artifact embeds the tool version, a hash of the
merged config, and the master seed, so identical inputs reproduce identical
outputs byte for byte.

Exit codes: 0 success, 1 config error, 2 runtime or data error, 3 symmetry
check failed.
"""

import argparse
import hashlib
import json
import os
import sys

import jsonschema
import numpy as np

from . import __version__
from .bench import (METHODS, BenchConfig, _fit_method, emit_report,
                    run_benchmark)
from .constraint import assemble_equivariant_basis, materialize
from .discover import (DiscoveryConfig, GpConfig, OptimizerConfig,
                       SindyModel, equation_strings)
from .dynamics import (SYSTEMS, GpSmoothConfig, NoiseSpec, get_system,
                       load_dataset, make_dataset, sample_initial,
                       save_dataset, split_rng)
from .library import build_library
from .symmetry import Generator, check_infinitesimal_criterion


class ConfigError(Exception):
    """Raised for any problem with the merged configuration document."""


# -- config schema ---------------------------------------------------------------

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_NUM_OR_NULL = {"type": ["number", "null"]}

_GENERATOR_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["linear", "symbolic"]},
        "matrix": {"type": "array",
                   "items": {"type": "array", "items": _NUM}},
        "components": {"type": "array", "items": {"type": "string"}},
        "label": {"type": "string"},
    },
    "required": ["kind"],
}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "system": {"enum": sorted(SYSTEMS)},
        "dataset": {"type": "string"},
        "library": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "degree": {"type": "integer", "minimum": 0},
                "exponentials": {"type": "boolean"},
            },
        },
        "generators": {"type": "array", "items": _GENERATOR_SCHEMA},
        "method": {"enum": list(METHODS)},
        "discovery": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "threshold": {"type": "number", "minimum": 0},
                "max_rounds": {"type": "integer", "minimum": 1},
                "lambda_symm": _NUM_OR_NULL,
                "loss_kind": {"enum": ["igie", "fgie", "igfe", "fgfe"]},
                "tau": _NUM,
                "eps": _NUM,
                "flow_steps": {"type": "integer", "minimum": 1},
                "batch": {"type": "integer", "minimum": 1},
                "lambda_grid": {"type": "array", "items": _NUM},
                "optimizer": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"max_iters": _INT, "grad_tol": _NUM,
                                   "memory": _INT},
                },
                "gp": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "population": _INT, "generations": _INT,
                        "p_crossover": _NUM, "p_subtree": _NUM,
                        "p_point": _NUM, "max_depth": _INT,
                        "parsimony": _NUM, "tournament": _INT,
                        "operators": {"type": "array",
                                      "items": {"type": "string"}},
                        "constant_range": {"type": "array", "items": _NUM,
                                           "minItems": 2, "maxItems": 2},
                        "max_fit_samples": _INT, "penalty_points": _INT,
                        "target_mse": _NUM,
                    },
                },
            },
        },
        "benchmark": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "methods": {"type": "array", "items": {"enum": list(METHODS)},
                            "minItems": 1},
                "runs": {"type": "integer", "minimum": 1},
                "horizon": _NUM_OR_NULL,
                "n_checkpoints": {"type": "integer", "minimum": 1},
                "ltp_ics": {"type": "integer", "minimum": 1},
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "noise": {"type": ["number", "null"], "minimum": 0},
                "noise_kind": {"enum": ["additive_relative",
                                        "multiplicative", "none"]},
                "n_samples": {"type": "integer", "minimum": 2},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "n_train": {"type": "integer", "minimum": 0},
                "n_val": {"type": "integer", "minimum": 0},
                "n_test": {"type": "integer", "minimum": 0},
            },
        },
        "seeds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"master": {"type": "integer", "minimum": 0}},
        },
        "out": {"type": "string"},
        "jobs": {"type": "integer", "minimum": 1},
    },
}


def validate_config(cfg):
    """Schema-check a merged config; raises ConfigError naming the bad path."""
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        err = errors[0]
        path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config error at {path}: {err.message}")


def config_hash(cfg):
    """Hash of the experiment portion of a config.

    The out directory and the worker cap select where and how fast results
    are produced, never what they are, so they stay outside the hash.
    """
    body = {k: v for k, v in cfg.items() if k not in ("out", "jobs")}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _provenance(cfg):
    return {"tool_version": __version__,
            "config_hash": config_hash(cfg),
            "master_seed": cfg.get("seeds", {}).get("master", 0)}


# -- config assembly -------------------------------------------------------------


def _set(cfg, path, value):
    if value is None:
        return
    node = cfg
    for key in path[:-1]:
        node = node.setdefault(key, {})
    node[path[-1]] = value


def load_config_file(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")


def merge_config(args):
    """File config overlaid with any explicitly passed flags."""
    cfg = load_config_file(args.config) if args.config else {}
    for flag, path in (
            ("system", ("system",)),
            ("dataset", ("dataset",)),
            ("method", ("method",)),
            ("out", ("out",)),
            ("jobs", ("jobs",)),
            ("seed", ("seeds", "master")),
            ("noise", ("data", "noise")),
            ("noise_kind", ("data", "noise_kind")),
            ("samples", ("data", "n_samples")),
            ("dt", ("data", "dt")),
            ("train", ("data", "n_train")),
            ("val", ("data", "n_val")),
            ("test", ("data", "n_test")),
            ("degree", ("library", "degree")),
            ("exponentials", ("library", "exponentials")),
            ("threshold", ("discovery", "threshold")),
            ("lambda_symm", ("discovery", "lambda_symm")),
            ("loss", ("discovery", "loss_kind")),
            ("runs", ("benchmark", "runs")),
            ("horizon", ("benchmark", "horizon")),
    ):
        _set(cfg, path, getattr(args, flag, None))
    if getattr(args, "methods", None):
        _set(cfg, ("benchmark", "methods"),
             [m.strip() for m in args.methods.split(",") if m.strip()])
    validate_config(cfg)
    return cfg


def _require(cfg, key, hint):
    if key not in cfg:
        raise ConfigError(f"config error at {key}: {hint}")
    return cfg[key]


def _build_generators(cfg, dim, default=()):
    if "generators" in cfg:
        try:
            return tuple(Generator.from_config(g, dim)
                         for g in cfg["generators"])
        except Exception as exc:
            raise ConfigError(f"config error at generators: {exc}")
    return tuple(default)


def _build_library(cfg, system):
    section = cfg.get("library", {})
    degree = section.get("degree", system.library_degree)
    expo = section.get("exponentials", system.library_exponentials)
    return build_library(system.dim, degree, expo)


def _build_noise(cfg, system):
    """Noise override from the data section; None keeps the registry default."""
    section = cfg.get("data", {})
    if "noise" not in section and "noise_kind" not in section:
        return None
    sigma = section.get("noise")
    kind = section.get("noise_kind")
    if sigma is None:
        sigma = system.data.noise.sigma
    if sigma == 0 or kind == "none":
        return NoiseSpec("none", 0.0)
    return NoiseSpec(kind or system.data.noise.kind, float(sigma))


def _build_discovery(cfg, system, master):
    section = dict(cfg.get("discovery", {}))
    opt = OptimizerConfig(**section.pop("optimizer", {}))
    gp_kw = section.pop("gp", {})
    for key in ("operators", "constant_range"):
        if key in gp_kw:
            gp_kw[key] = tuple(gp_kw[key])
    gp = GpConfig(seed=master, **gp_kw)
    if "lambda_grid" in section:
        section["lambda_grid"] = tuple(section["lambda_grid"])
    section.setdefault("threshold", system.data.threshold)
    return DiscoveryConfig(seed=master, optimizer=opt, gp=gp, **section)


def _counts(cfg, system):
    section = cfg.get("data", {})
    spec = system.data
    counts = (section.get("n_train", spec.n_train),
              section.get("n_val", spec.n_val),
              section.get("n_test", spec.n_test))
    return None if counts == (spec.n_train, spec.n_val, spec.n_test) \
        else counts


def _outdir(cfg):
    out = cfg.get("out", ".")
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _stamp_csv(path, prov):
    """Prepend provenance comment lines to an emitted CSV."""
    with open(path) as fh:
        body = fh.read()
    header = "".join(f"# {k}={prov[k]}\n" for k in sorted(prov))
    with open(path, "w") as fh:
        fh.write(header + body)


# -- subcommands -----------------------------------------------------------------


def cmd_generate(cfg):
    system = get_system(_require(cfg, "system", "generate needs a system"))
    master = cfg.get("seeds", {}).get("master", 0)
    ds = make_dataset(system, master,
                      noise=_build_noise(cfg, system),
                      n_samples=cfg.get("data", {}).get("n_samples"),
                      dt=cfg.get("data", {}).get("dt"),
                      counts=_counts(cfg, system))
    outdir = _outdir(cfg)
    save_dataset(ds, outdir, extra_meta={"provenance": _provenance(cfg)})
    counts = {s: len(ds.splits[s]) for s in ds.splits}
    print(f"wrote dataset for {ds.system} to {outdir}")
    print(f"  splits: {counts}, samples per trajectory: "
          f"{ds.meta['n_samples']}, dt={ds.dt}, noise={ds.noise.kind} "
          f"sigma={ds.noise.sigma}")
    print(f"  manifest: {os.path.join(outdir, 'manifest.json')}")
    return 0


def cmd_nullspace(cfg):
    system = get_system(_require(cfg, "system", "nullspace needs a system"))
    lib = _build_library(cfg, system)
    gens = _build_generators(cfg, system.dim, system.generators)
    if not gens:
        raise ConfigError(
            "config error at generators: nullspace needs at least one "
            "generator (the chosen system has none registered)")
    basis = assemble_equivariant_basis(lib, gens)
    print(f"r = {basis.nullity}")
    shown = min(basis.nullity, 8)
    for k in range(shown):
        beta = np.zeros(basis.nullity)
        beta[k] = 1.0
        print(f"Q{k+1}:")
        for line in equation_strings(lib, materialize(basis, beta)):
            print(f"  {line}")
    if shown < basis.nullity:
        print(f"... ({basis.nullity - shown} more basis elements in "
              "nullspace.json)")
    outdir = _outdir(cfg)
    path = os.path.join(outdir, "nullspace.json")
    _write_json(path, {
        "system": system.name,
        "library": lib.labels(),
        "generators": [g.to_config() for g in gens],
        "r": basis.nullity,
        "Q": basis.Q.tolist(),
        "singular_values": basis.singular_values.tolist(),
        "provenance": _provenance(cfg),
    })
    print(f"basis written to {path}")
    return 0


def cmd_check_symmetry(cfg, points=200, tol=1e-8):
    system = get_system(_require(cfg, "system",
                                 "check-symmetry needs a system"))
    gens = _build_generators(cfg, system.dim, system.generators)
    if not gens:
        raise ConfigError(
            "config error at generators: check-symmetry needs at least one "
            "generator (the chosen system has none registered)")
    master = cfg.get("seeds", {}).get("master", 0)
    rng = split_rng(master, 0)
    pts = np.array([sample_initial(system, rng) for _ in range(points)])
    report = check_infinitesimal_criterion(system.oracle(), gens, pts,
                                           tol=tol)
    print(f"system {system.name}: max residual {report['max']:.3e}, "
          f"mean {report['mean']:.3e} over {points} points (tol {tol:g})")
    for entry in report["per_generator"]:
        print(f"  {entry['label']}: max {entry['max']:.3e}, "
              f"mean {entry['mean']:.3e}")
    verdict = "consistent" if report["consistent"] else "NOT consistent"
    print(f"symmetry check: {verdict}")
    outdir = _outdir(cfg)
    path = os.path.join(outdir, "check_symmetry.json")
    _write_json(path, {"system": system.name, "n_points": points,
                       "report": report, "provenance": _provenance(cfg)})
    print(f"report written to {path}")
    return 0 if report["consistent"] else 3


def cmd_discover(cfg):
    if "dataset" in cfg:
        ds = load_dataset(cfg["dataset"])
        system = get_system(ds.system)
    elif "system" in cfg:
        system = get_system(cfg["system"])
        master = cfg.get("seeds", {}).get("master", 0)
        ds = make_dataset(system, master,
                          noise=_build_noise(cfg, system),
                          n_samples=cfg.get("data", {}).get("n_samples"),
                          dt=cfg.get("data", {}).get("dt"),
                          counts=_counts(cfg, system))
    else:
        raise ConfigError(
            "config error at system: discover needs a system or a dataset")
    master = cfg.get("seeds", {}).get("master", 0)
    method = cfg.get("method", "equiv-c")
    lib = _build_library(cfg, system)
    gens = _build_generators(cfg, system.dim, system.generators)
    if method in ("equiv-c", "equiv-r", "equiv-gp-r") and not gens:
        raise ConfigError(
            f"config error at generators: method {method} needs at least "
            "one generator")
    dcfg = _build_discovery(cfg, system, master)
    model = _fit_method(method, ds, lib, gens, dcfg)
    print(f"discovered ({method} on {system.name}):")
    for line in model.equations():
        print(f"  {line}")
    payload = {
        "system": system.name,
        "method": method,
        "equations": model.equations(),
        "provenance": _provenance(cfg),
    }
    if isinstance(model, SindyModel):
        payload["library"] = lib.labels()
        payload["W"] = model.W.tolist()
        payload["coefficients"] = [
            {key.label(): val for key, val in row.items()}
            for row in model.coefficients()]
        payload["fit"] = model.provenance
    else:
        payload["fitness"] = model.fitness
        payload["fit"] = model.provenance
    outdir = _outdir(cfg)
    path = os.path.join(outdir, "model.json")
    _write_json(path, payload)
    print(f"model written to {path}")
    return 0


def cmd_benchmark(cfg):
    system = get_system(_require(cfg, "system", "benchmark needs a system"))
    master = cfg.get("seeds", {}).get("master", 0)
    section = cfg.get("benchmark", {})
    data_over = []
    data_section = cfg.get("data", {})
    if "n_samples" in data_section:
        data_over.append(("n_samples", data_section["n_samples"]))
    if "dt" in data_section:
        data_over.append(("dt", data_section["dt"]))
    counts = _counts(cfg, system)
    if counts is not None:
        data_over.append(("counts", counts))
    bc = BenchConfig(
        system=system.name,
        methods=tuple(section.get("methods", ("sindy", "equiv-c"))),
        runs=section.get("runs", 20),
        seed=master,
        noise=_build_noise(cfg, system),
        discovery=(_build_discovery(cfg, system, master)
                   if "discovery" in cfg else None),
        generators=(_build_generators(cfg, system.dim)
                    if "generators" in cfg else None),
        horizon=section.get("horizon"),
        n_checkpoints=section.get("n_checkpoints", 10),
        ltp_ics=section.get("ltp_ics", 5),
        data=tuple(data_over),
        jobs=cfg.get("jobs", 1),
    )
    report = run_benchmark(bc)
    prov = _provenance(cfg)
    report["provenance"] = prov
    outdir = _outdir(cfg)
    emit_report(report, outdir)
    _stamp_csv(os.path.join(outdir, "tables.csv"), prov)
    _stamp_csv(os.path.join(outdir, "ltp.csv"), prov)
    print(f"benchmark {system.name}: {bc.runs} runs, methods "
          f"{', '.join(bc.methods)}")
    for m in bc.methods:
        succ = report["aggregates"][m]["success"]
        cells = ", ".join(f"{k}={succ[k]:.2f}" for k in sorted(succ))
        print(f"  {m}: {cells}")
    print(f"report files in {outdir}: report.json, tables.csv, ltp.csv, "
          "timings.json")
    return 0


# -- argument parsing ------------------------------------------------------------


def _add_common(sub):
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--out", help="output directory (default .)")
    sub.add_argument("--seed", type=int, help="master seed")
    sub.add_argument("--jobs", type=int, help="worker process cap")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="symodes",
        description="Symmetry-informed discovery of governing equations "
                    "from trajectory data")
    parser.add_argument("--version", action="version",
                        version=f"symodes {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("generate", help="simulate a dataset to CSV + manifest")
    _add_common(p)
    p.add_argument("--system", help="registered system name")
    p.add_argument("--noise", type=float, help="noise level sigma_R")
    p.add_argument("--noise-kind", dest="noise_kind",
                   choices=["additive_relative", "multiplicative", "none"])
    p.add_argument("--samples", type=int, help="samples per trajectory")
    p.add_argument("--dt", type=float, help="sampling interval")
    p.add_argument("--train", type=int, help="training trajectories")
    p.add_argument("--val", type=int, help="validation trajectories")
    p.add_argument("--test", type=int, help="test trajectories")

    p = subs.add_parser("nullspace",
                        help="solve the symmetry constraint for a basis")
    _add_common(p)
    p.add_argument("--system", help="registered system name")
    p.add_argument("--degree", type=int, help="library polynomial degree")
    p.add_argument("--exponentials", action="store_const", const=True,
                   default=None, help="include exp(xi) library terms")

    p = subs.add_parser("check-symmetry",
                        help="test generators against a system's dynamics")
    _add_common(p)
    p.add_argument("--system", help="registered system name")
    p.add_argument("--points", type=int, default=200,
                   help="sample points for the residual check")
    p.add_argument("--tol", type=float, default=1e-8,
                   help="consistency tolerance")

    p = subs.add_parser("discover", help="fit a model on one dataset")
    _add_common(p)
    p.add_argument("--system", help="registered system name")
    p.add_argument("--dataset", help="directory of a generated dataset")
    p.add_argument("--method", choices=list(METHODS))
    p.add_argument("--noise", type=float, help="noise level sigma_R")
    p.add_argument("--threshold", type=float, help="sparsity threshold")
    p.add_argument("--lambda", dest="lambda_symm", type=float,
                   help="symmetry regularization weight")
    p.add_argument("--loss", choices=["igie", "fgie", "igfe", "fgfe"],
                   help="symmetry loss variant")

    p = subs.add_parser("benchmark", help="run seeded discovery benchmarks")
    _add_common(p)
    p.add_argument("--system", help="registered system name")
    p.add_argument("--methods", help="comma-separated method list")
    p.add_argument("--runs", type=int, help="number of seeded runs")
    p.add_argument("--noise", type=float, help="noise level sigma_R")
    p.add_argument("--horizon", type=float,
                   help="long-term prediction horizon")
    return parser


_COMMANDS = {
    "generate": cmd_generate,
    "nullspace": cmd_nullspace,
    "check-symmetry": cmd_check_symmetry,
    "discover": cmd_discover,
    "benchmark": cmd_benchmark,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = merge_config(args)
        if args.command == "check-symmetry":
            return cmd_check_symmetry(cfg, points=args.points, tol=args.tol)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except KeyError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
