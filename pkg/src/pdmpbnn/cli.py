"""Command-line front end: ``pdmpbnn sample | diagnose | compare``.

A run is described by a TOML file::

    seed = 0
    repeats = 1
    num_samples = 2000

    [model]
    family = "mlp-regression"

    [data]
    source = "synthetic-regression"
    n = 100

    [sampler]
    method = "boomerang"
    gamma = 0.1

Unknown keys are rejected. ``sample`` writes one directory per repeat holding
``chain.csv``, ``metrics.json``, ``manifest.json`` and ``pc_scores.csv``.
Exit status is 0 on success, 2 for configuration errors and 3 for failures
while running; errors are also printed to stderr as one JSON object.
"""
import argparse
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, replace
import hashlib
import json
import os
import sys
import time

import numpy as np
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .baselines import SgldConfig, run_sgld
from .diagnostics import chain_metrics, first_principal_component, last_principal_component
from .errors import ConfigError, DiagnosticError, PdmpError
from .ipp import ThinningAudit
from .model import (Model, ModelSpec, load_csv_dataset, map_fit,
                    synth_classification, synth_regression)
from .samplers import KERNELS, Chain, SamplerConfig, run_chain

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
METHODS = KERNELS + ("sgld",)
SOURCES = ("csv", "synthetic-regression", "synthetic-classification")

# expected TOML types per key; floats also accept integers
_MODEL_KEYS = {"family": str, "dim": int, "widths": list, "activation": str,
               "noise_var": float, "prior": str, "prior_precision": float,
               "num_classes": int}
_DATA_KEYS = {"source": str, "path": str, "header": bool, "n": int, "noise": float,
              "low": float, "high": float, "seed": int, "test_path": str, "test_n": int}
_PDMP_KEYS = {"lambda_ref": float, "gamma": float, "alpha": float, "R": float,
              "t_init": float, "warmup_events": int}
_SGLD_KEYS = {"lr0": float, "decay": str, "steps": int}
_COMMON_SAMPLER_KEYS = {"method": str, "thinning_factor": int, "batch_size": int}
_MAP_KEYS = {"iterations": int, "step": float}
_TOP_KEYS = {"seed": int, "repeats": int, "num_samples": int, "out_dir": str}
_TABLES = ("model", "data", "sampler", "map")


@dataclass(frozen=True)
class DataSpec:
    """Where the training (and test) rows come from.

    Synthetic sources draw ``n`` training rows with ``seed`` and ``test_n`` test
    rows with ``seed + 1`` on the same input range.
    """

    source: str = "synthetic-regression"
    path: str | None = None
    header: bool = False
    n: int = 100
    noise: float = 0.1
    low: float = -1.0
    high: float = 1.0
    seed: int = 0
    test_path: str | None = None
    test_n: int = 100

    def problems(self):
        out = []
        if self.source not in SOURCES:
            out.append(("data.source", f"must be one of {SOURCES}"))
        if self.source == "csv" and not self.path:
            out.append(("data.path", "required for csv data"))
        if self.source != "csv" and self.n < 2:
            out.append(("data.n", "must be >= 2"))
        if self.test_n < 1:
            out.append(("data.test_n", "must be >= 1"))
        if not self.noise >= 0:
            out.append(("data.noise", "must be >= 0"))
        if not self.high > self.low:
            out.append(("data.high", "must exceed data.low"))
        return out

    def load(self):
        """Return ``(train, test)``; ``test`` may be ``None`` for csv without test_path."""
        if self.source == "csv":
            train = load_csv_dataset(self.path, self.header)
            test = load_csv_dataset(self.test_path, self.header) if self.test_path else None
            return train, test
        if self.source == "synthetic-regression":
            make = lambda s, n: synth_regression(s, n, self.noise, self.low, self.high)
        else:
            make = lambda s, n: synth_classification(s, n, self.noise)
        return make(self.seed, self.n), make(self.seed + 1, self.test_n)


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec
    sampler: SamplerConfig | SgldConfig
    data: DataSpec | None = None
    seed: int = 0
    repeats: int = 1
    num_samples: int = 2000
    out_dir: str | None = None
    map_iterations: int = 1000
    map_step: float = 1e-2

    @property
    def method(self):
        return "sgld" if isinstance(self.sampler, SgldConfig) else self.sampler.kernel

    def with_seed(self, seed):
        return replace(self, seed=seed, sampler=replace(self.sampler, seed=seed))


# -- parsing ----------------------------------------------------------------------


def _typed(table, schema, prefix, problems):
    out = {}
    for key, value in table.items():
        name = f"{prefix}{key}"
        if key not in schema:
            problems.append((name, "unknown key"))
            continue
        want = schema[key]
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if want is int and isinstance(value, bool) or not isinstance(value, want):
            problems.append((name, f"expected {want.__name__}, got {type(value).__name__}"))
            continue
        out[key] = value
    return out


def config_from_dict(doc):
    """Validate a decoded TOML document into a :class:`RunConfig`.

    Raises :class:`ConfigError` listing every problem with its field name.
    """
    problems = []
    top = {k: v for k, v in doc.items() if k not in _TABLES}
    top = _typed(top, _TOP_KEYS, "", problems)
    tables = {}
    schemas = {"model": _MODEL_KEYS, "data": _DATA_KEYS, "map": _MAP_KEYS,
               "sampler": {**_COMMON_SAMPLER_KEYS, **_PDMP_KEYS, **_SGLD_KEYS}}
    for name in _TABLES:
        raw = doc.get(name, {})
        if not isinstance(raw, dict):
            problems.append((name, "must be a table"))
            raw = {}
        tables[name] = _typed(raw, schemas[name], f"{name}.", problems)

    if "model" not in doc:
        problems.append(("model", "missing [model] table"))
    mdl = tables["model"]
    if "widths" in mdl:
        if not all(isinstance(w, int) and not isinstance(w, bool) for w in mdl["widths"]):
            problems.append(("model.widths", "must be a list of integers"))
    model = None
    if "family" not in mdl:
        if "model" in doc:
            problems.append(("model.family", "required"))
    else:
        try:
            model = ModelSpec(**mdl)
        except PdmpError as exc:
            problems.append(("model", str(exc)))

    data = None
    if model is not None:
        if model.needs_data and "data" not in doc:
            problems.append(("data", f"{model.family} needs a [data] table"))
        elif not model.needs_data and "data" in doc:
            problems.append(("data", "gaussian-target takes no dataset"))
    if "data" in doc:
        data = DataSpec(**tables["data"])
        problems.extend(data.problems())
        if model is not None and model.family in ("linear-regression", "mlp-regression") \
                and data.source == "synthetic-classification":
            problems.append(("data.source", "regression model needs regression data"))

    repeats = top.get("repeats", 1)
    num_samples = top.get("num_samples", 2000)
    seed = top.get("seed", 0)
    if repeats < 1:
        problems.append(("repeats", "must be >= 1"))
    if num_samples < 1:
        problems.append(("num_samples", "must be >= 1"))
    if seed < 0:
        problems.append(("seed", "must be >= 0"))

    smp = dict(tables["sampler"])
    method = smp.pop("method", "bps")
    sampler = None
    if method not in METHODS:
        problems.append(("sampler.method", f"must be one of {METHODS}"))
    else:
        foreign = _PDMP_KEYS if method == "sgld" else _SGLD_KEYS
        for key in list(smp):
            if key in foreign:
                problems.append((f"sampler.{key}", f"not used by method {method!r}"))
                smp.pop(key)
        try:
            if method == "sgld":
                sampler = SgldConfig(num_samples=max(num_samples, 1), seed=seed, **smp)
            else:
                sampler = SamplerConfig(kernel=method, num_samples=max(num_samples, 1),
                                        seed=seed, **smp)
        except ConfigError as exc:
            problems.extend((f"sampler.{k}", m) for k, m in exc.problems)

    mp = tables["map"]
    if mp.get("iterations", 0) < 0:
        problems.append(("map.iterations", "must be >= 0"))
    if mp.get("step", 1.0) <= 0:
        problems.append(("map.step", "must be > 0"))

    if problems:
        raise ConfigError(problems)
    return RunConfig(model=model, sampler=sampler, data=data, seed=seed, repeats=repeats,
                     num_samples=num_samples, out_dir=top.get("out_dir"),
                     map_iterations=mp.get("iterations", 1000), map_step=mp.get("step", 1e-2))


def parse_config(path):
    """Read and validate a TOML run configuration."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError([("config", f"file not found: {path}")])
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([("config", f"invalid TOML: {exc}")])
    return config_from_dict(doc)


def _drop_none(d):
    return {k: v for k, v in d.items() if v is not None}


def config_to_dict(cfg):
    doc = {"seed": cfg.seed, "repeats": cfg.repeats, "num_samples": cfg.num_samples}
    if cfg.out_dir is not None:
        doc["out_dir"] = cfg.out_dir
    model = _drop_none(asdict(cfg.model))
    model["widths"] = list(model["widths"])
    doc["model"] = model
    if cfg.data is not None:
        doc["data"] = _drop_none(asdict(cfg.data))
    smp = _drop_none(asdict(cfg.sampler))
    smp.pop("seed")
    smp.pop("num_samples")
    smp["method"] = smp.pop("kernel", "sgld")
    doc["sampler"] = smp
    doc["map"] = {"iterations": cfg.map_iterations, "step": cfg.map_step}
    return doc


def serialize_config(cfg):
    """TOML text that :func:`parse_config` reads back to an equal config."""
    return tomli_w.dumps(config_to_dict(cfg))


def config_hash(cfg):
    """SHA-256 of the configuration without its seed and output directory."""
    doc = config_to_dict(replace(cfg.with_seed(0), out_dir=None))
    doc.pop("seed")
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def repeat_seeds(seed, repeats):
    """Independent 32-bit seeds, one per repeat, derived from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(repeats)
    return [int(c.generate_state(1)[0]) for c in children]


# -- running ------------------------------------------------------------------------


def build_model(cfg):
    if cfg.data is None:
        return Model(cfg.model), None
    train, test = cfg.data.load()
    return Model(cfg.model, train), test


def _write_pc_scores(path, samples):
    first = first_principal_component(samples)[1]
    last = last_principal_component(samples)[1]
    np.savetxt(path, np.column_stack([first, last]), delimiter=",",
               header="pc_first,pc_last", comments="", fmt="%.17g")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def run_repeat(cfg, repeat, seed, out_dir):
    """Fit the MAP, sample and write the artifacts of one repeat."""
    start = time.perf_counter()
    rcfg = cfg.with_seed(seed)
    model, test = build_model(rcfg)
    init = map_fit(model, iterations=rcfg.map_iterations, step=rcfg.map_step, seed=seed)
    if rcfg.method == "sgld":
        chain = run_sgld(model, rcfg.sampler, init=init)
    else:
        chain = run_chain(model, rcfg.sampler, init=init)
    os.makedirs(out_dir, exist_ok=True)
    chain.to_csv(os.path.join(out_dir, "chain.csv"))
    metrics = chain_metrics(model, chain, test)
    _write_json(os.path.join(out_dir, "metrics.json"), metrics)
    if len(chain) >= 2:
        try:
            _write_pc_scores(os.path.join(out_dir, "pc_scores.csv"), chain.samples)
        except DiagnosticError:
            pass
    manifest = {
        "method": rcfg.method,
        "repeat": repeat,
        "seed": seed,
        "base_seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "num_samples": len(chain),
        "refresh_count": chain.refresh_count,
        "bounce_count": chain.bounce_count,
        "wall_time_s": time.perf_counter() - start,
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def _run_repeat_args(args):
    return run_repeat(*args)


def run(cfg, out_dir, jobs=1):
    """Run every repeat; returns the list of manifests."""
    seeds = repeat_seeds(cfg.seed, cfg.repeats)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.toml"), "w") as fh:
        fh.write(serialize_config(cfg))
    tasks = [(cfg, i, s, os.path.join(out_dir, f"repeat_{i:03d}")) for i, s in enumerate(seeds)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_repeat_args, tasks))
    return [run_repeat(*t) for t in tasks]


def diagnose(cfg, chain_path, out_dir=None):
    """Recompute metrics for a stored chain; keeps a previously stored audit."""
    model, test = build_model(cfg)
    chain = Chain.from_csv(chain_path)
    if chain.dim != model.dim:
        raise DiagnosticError(f"chain dimension {chain.dim} does not match model ({model.dim})")
    src_dir = os.path.dirname(os.path.abspath(chain_path))
    previous = os.path.join(src_dir, "metrics.json")
    if os.path.exists(previous):
        with open(previous) as fh:
            stored = json.load(fh).get("thinning_audit")
        if stored:
            chain.audit = ThinningAudit.from_dict(stored)
    metrics = chain_metrics(model, chain, test)
    out_dir = out_dir or src_dir
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "metrics.json"), metrics)
    return metrics


COMPARE_COLUMNS = ("run", "method", "ess_first_pc", "ess_last_pc", "nll", "rmse", "acc", "ece")


def collect_runs(paths):
    """Rows of ``COMPARE_COLUMNS`` for every directory containing ``metrics.json``."""
    rows = []
    for root in paths:
        for dirpath, _, files in sorted(os.walk(root)):
            if "metrics.json" not in files:
                continue
            with open(os.path.join(dirpath, "metrics.json")) as fh:
                metrics = json.load(fh)
            method = None
            if "manifest.json" in files:
                with open(os.path.join(dirpath, "manifest.json")) as fh:
                    method = json.load(fh).get("method")
            row = {"run": dirpath, "method": method}
            row.update({k: metrics.get(k) for k in COMPARE_COLUMNS[2:]})
            rows.append(row)
    return rows


def format_table(rows):
    def cell(v):
        if v is None:
            return "-"
        return f"{v:.4g}" if isinstance(v, float) else str(v)

    table = [list(COMPARE_COLUMNS)] + [[cell(r[c]) for c in COMPARE_COLUMNS] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(COMPARE_COLUMNS))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
                     for row in table)


# -- entry point ------------------------------------------------------------------------


def _parser():
    p = argparse.ArgumentParser(prog="pdmpbnn", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="fit MAP, run the sampler, write artifacts")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--jobs", type=int, default=1, help="repeats run in parallel")

    d = sub.add_parser("diagnose", help="recompute metrics from a stored chain CSV")
    d.add_argument("--config", required=True)
    d.add_argument("--chain", required=True)
    d.add_argument("--out")

    c = sub.add_parser("compare", help="tabulate metrics across stored runs")
    c.add_argument("runs", nargs="+")
    c.add_argument("--out", help="also write the table as CSV to this file")
    return p


def _fail(code, kind, message, problems=()):
    err = {"error": kind, "message": message}
    if problems:
        err["problems"] = [{"field": f, "message": m} for f, m in problems]
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "sample":
            cfg = parse_config(args.config)
            if args.seed is not None:
                if args.seed < 0:
                    raise ConfigError([("seed", "must be >= 0")])
                cfg = cfg.with_seed(args.seed)
            out = args.out or cfg.out_dir
            if not out:
                raise ConfigError([("out_dir", "give --out or set out_dir")])
            if args.jobs < 1:
                raise ConfigError([("jobs", "must be >= 1")])
            for m in run(cfg, out, args.jobs):
                print(f"repeat {m['repeat']}: seed {m['seed']}, "
                      f"{m['num_samples']} samples in {m['wall_time_s']:.2f}s")
        elif args.command == "diagnose":
            cfg = parse_config(args.config)
            print(json.dumps(diagnose(cfg, args.chain, args.out), indent=2))
        else:
            rows = collect_runs(args.runs)
            if not rows:
                raise ConfigError([("runs", "no metrics.json found")])
            print(format_table(rows))
            if args.out:
                with open(args.out, "w") as fh:
                    fh.write(",".join(COMPARE_COLUMNS) + "\n")
                    for r in rows:
                        fh.write(",".join("" if r[c] is None else str(r[c])
                                          for c in COMPARE_COLUMNS) + "\n")
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc), exc.problems)
    except (PdmpError, OSError, ValueError) as exc:
        return _fail(EXIT_RUNTIME, "runtime", f"{type(exc).__name__}: {exc}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
