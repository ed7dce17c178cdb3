"""Command-line front end.

Usage::

    qcrlab bound -c configs/bound.yaml --set solver.restarts=8 --out-dir out/

Each run writes ``result.json`` (config echo, results, diagnostics, version,
numeric policy) and a flat CSV table.  Exit status: 0 success, 2 config
error, 3 numerical or domain error.
"""

import argparse
import copy
import csv
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import numpy as np
import yaml

from . import __version__
from .adaptive_sim import (
    MseReport,
    WarmStart,
    block_collective_study,
    make_strategy,
    mse_study,
    regularity_diagnostics,
)
from .bound_solver import SolverOptions, cr_bound, cr_bound_n, quantum_cr_bound
from .errors import ConfigError, IoError, ModelError, QcrError
from .fisher_info import classical_fisher, sld_fisher
from .policy import DEFAULT_POLICY
from .quantum_model import (
    MODEL_REGISTRY,
    basis_povm,
    default_m0,
    make_model,
    pauli6_povm,
    validate_povm,
)

log = logging.getLogger("qcrlab")

COMMANDS = ("validate", "fisher", "bound", "bound-n", "simulate", "collective", "diagnostics")
TABLE_COLUMNS = ("n", "trials", "trace_mse", "n_trace_mse", "mc_stderr", "c_bound", "sld_bound", "n_cn_bound")


@dataclass
class RunConfig:
    command: str
    model: str
    model_params: dict
    theta: List[float]
    G: Optional[List[List[float]]] = None
    povm: str = "default"
    solver: dict = field(default_factory=dict)
    simulation: dict = field(default_factory=dict)
    bound: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)


_SECTIONS = {"command", "model", "theta", "G", "povm", "solver", "simulation", "bound", "output"}
_SIM_KEYS = {"n_grid", "trials", "seed", "n1", "n2_grid", "pitch", "warm", "workers", "deltas", "n"}
_BOUND_KEYS = {"n", "n_max"}


def _fail(path, msg):
    raise ConfigError(f"{path}: {msg}")


def parse_config(doc: dict) -> RunConfig:
    """Check the document against the schema; every error names the offending field."""
    if not isinstance(doc, dict):
        _fail("<root>", "config must be a mapping")
    unknown = set(doc) - _SECTIONS
    if unknown:
        _fail(sorted(unknown)[0], "unknown top-level field")
    cmd = doc.get("command")
    if cmd not in COMMANDS:
        _fail("command", f"must be one of {', '.join(COMMANDS)}")
    model = doc.get("model")
    if isinstance(model, str):
        model = {"name": model}
    if not isinstance(model, dict) or model.get("name") not in MODEL_REGISTRY:
        _fail("model.name", f"must be one of {sorted(MODEL_REGISTRY)}")
    params = model.get("params") or {}
    if not isinstance(params, dict):
        _fail("model.params", "must be a mapping")
    theta = doc.get("theta")
    if not isinstance(theta, list) or not all(isinstance(v, (int, float)) for v in theta):
        _fail("theta", "must be a list of numbers")
    for sec in ("solver", "simulation", "bound", "output"):
        if not isinstance(doc.get(sec, {}) or {}, dict):
            _fail(sec, "must be a mapping")
    sim = doc.get("simulation") or {}
    bad = set(sim) - _SIM_KEYS
    if bad:
        _fail(f"simulation.{sorted(bad)[0]}", "unknown field")
    bnd = doc.get("bound") or {}
    bad = set(bnd) - _BOUND_KEYS
    if bad:
        _fail(f"bound.{sorted(bad)[0]}", "unknown field")
    solver = doc.get("solver") or {}
    known = {f.name for f in fields(SolverOptions)}
    bad = set(solver) - known
    if bad:
        _fail(f"solver.{sorted(bad)[0]}", "unknown field")
    povm = doc.get("povm", "default")
    if povm not in ("default", "pauli6", "basis"):
        _fail("povm", "must be default, pauli6 or basis")
    return RunConfig(cmd, model["name"], dict(params), [float(v) for v in theta], doc.get("G"), povm,
                     dict(solver), dict(sim), dict(bnd), dict(doc.get("output") or {}), copy.deepcopy(doc))


def apply_overrides(doc: dict, overrides):
    """``key.path=value`` assignments; values are parsed as YAML scalars or lists."""
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            _fail(item, "override must look like key.path=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                _fail(key, "cannot descend into a non-mapping")
        node[parts[-1]] = yaml.safe_load(value)
    return doc


def load_config(path, overrides=(), command=None):
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark else "?"
        raise ConfigError(f"{path}:{where}: {exc}") from None
    if command:
        overrides = list(overrides) + [f"command={command}"]
    return parse_config(apply_overrides(doc, overrides))


class _Setup:
    def __init__(self, cfg: RunConfig):
        try:
            self.model = make_model(cfg.model, **cfg.model_params)
        except TypeError as exc:
            _fail("model.params", str(exc))
        except ModelError as exc:
            _fail("model", str(exc))
        m = self.model.m
        self.theta = np.array(cfg.theta)
        if self.theta.shape != (m,):
            _fail("theta", f"model {cfg.model} has {m} parameters")
        if not self.model.domain.contains(self.theta):
            _fail("theta", f"outside the parameter box [{self.model.domain.lower}, {self.model.domain.upper}]")
        G = np.eye(m) if cfg.G is None else np.atleast_2d(np.asarray(cfg.G, dtype=float))
        if G.shape != (m, m):
            _fail("G", f"must be {m}x{m}")
        if np.max(np.abs(G - G.T)) > 1e-12:
            _fail("G", "weight matrix must be symmetric")
        if np.linalg.eigvalsh(G)[0] < -1e-10:
            _fail("G", "weight matrix must be positive semidefinite")
        self.G = G
        try:
            self.opts = SolverOptions(**cfg.solver)
        except (TypeError, QcrError) as exc:
            _fail("solver", str(exc))
        if cfg.povm == "pauli6":
            self.povm = pauli6_povm()
        elif cfg.povm == "basis":
            self.povm = basis_povm(self.model.dim)
        else:
            self.povm = default_m0(self.model)
        if self.povm.dim != self.model.dim:
            _fail("povm", "dimension does not match the model")
        sim = cfg.simulation
        self.trials = sim.get("trials", 1000)
        if cfg.command in ("simulate", "collective", "diagnostics"):
            if not isinstance(self.trials, int) or self.trials < 100:
                _fail("simulation.trials", "must be an integer >= 100")
        self.seed = int(sim.get("seed", 0))
        warm = sim.get("warm", {})
        self.warm = None if warm is None or warm is False else WarmStart(**(warm if isinstance(warm, dict) else {}))
        self.pitch = float(sim.get("pitch", 1e-3))
        self.workers = sim.get("workers")


def _bound_dict(res):
    return {
        "value": res.value, "sld_floor": res.sld_floor, "gap_estimate": res.gap_estimate,
        "outcomes": res.outcomes, "restarts_used": res.restarts_used, "evaluations": res.evaluations,
        "converged": res.converged,
        "argmin_povm": {
            "labels": list(res.argmin_povm.labels),
            "real": res.argmin_povm.elements.real.tolist(),
            "imag": res.argmin_povm.elements.imag.tolist(),
        },
    }


def _report_dict(r: MseReport):
    return {
        "n": r.n, "trials": r.trials, "V": r.V.tolist(), "trace_mse": r.trace_mse, "n_trace_mse": r.n_trace_mse,
        "mc_stderr": r.mc_stderr, "c_bound": r.c_bound, "sld_bound": r.sld_bound, "n_cn_bound": r.n_cn_bound,
        "failures": r.failures, "epsilon": r.epsilon, "block_size": r.block_size,
    }


def execute(cfg: RunConfig):
    """Run one command; returns ``(results, diagnostics, reports or None, summary lines)``."""
    s = _Setup(cfg)
    diags = {}
    reports = None
    summary = []
    if cfg.command == "validate":
        violations = validate_povm(s.povm)
        results = {"model": cfg.model, "m": s.model.m, "dim": s.model.dim,
                   "povm_violations": [v.axiom for v in violations], "K": s.model.domain.K}
        summary.append(f"config OK: model {cfg.model} (m={s.model.m}, d={s.model.dim}), theta inside domain, G valid")
    elif cfg.command == "fisher":
        J = classical_fisher(s.model, s.povm, s.theta)
        S = sld_fisher(s.model, s.theta)
        results = {"classical": J.matrix.tolist(), "sld": S.matrix.tolist()}
        summary.append(f"classical Fisher {np.round(J.matrix, 6).tolist()}  SLD Fisher {np.round(S.matrix, 6).tolist()}")
    elif cfg.command == "bound":
        res = cr_bound(s.model, s.theta, s.G, s.opts)
        results = _bound_dict(res)
        summary.append(f"C_theta(G) = {res.value:.6f}  SLD floor = {res.sld_floor:.6f}  gap = {res.gap_estimate:.2e}")
    elif cfg.command == "bound-n":
        n = int(cfg.bound.get("n", 2))
        n_max = cfg.bound.get("n_max")
        res = cr_bound_n(s.model, s.theta, s.G, n, s.opts)
        results = {"n": n, "bound": _bound_dict(res), "n_times_bound": n * res.value}
        summary.append(f"C^{n}_theta(G) = {res.value:.6f}  n*C^n = {n * res.value:.6f}")
        if n_max:
            q = quantum_cr_bound(s.model, s.theta, s.G, int(n_max), s.opts)
            results["sequence"] = [{"n": k, "n_cn": v} for k, v in q.scaled]
            results["running_min"] = q.running_min
            results["cq_upper_bound"] = q.upper_bound
            summary.append(f"C^Q upper bound (running min up to n={n_max}) = {q.upper_bound:.6f}")
    elif cfg.command == "simulate":
        grid = cfg.simulation.get("n_grid", [256, 1024, 4096])
        strategy = make_strategy(s.model, s.G, s.opts, s.pitch, 1, s.warm)
        reports = mse_study(s.model, s.theta, strategy, grid, s.trials, s.seed, s.G, s.opts, workers=s.workers)
        results = {"reports": [_report_dict(r) for r in reports]}
        diags["selector_solves"] = strategy.selector.solves
        for r in reports:
            summary.append(f"n={r.n}: n*TrGV = {r.n_trace_mse:.5f} ± {r.n_stderr:.5f}  (C = {r.c_bound:.5f})")
    elif cfg.command == "collective":
        n1 = int(cfg.simulation.get("n1", 2))
        grid = cfg.simulation.get("n2_grid", [128, 512, 2048])
        reports = block_collective_study(s.model, s.theta, s.G, n1, grid, s.trials, s.seed, s.opts, s.pitch,
                                         s.warm, workers=s.workers)
        results = {"n1": n1, "reports": [_report_dict(r) for r in reports]}
        for r in reports:
            summary.append(f"n={r.n}: n*TrGV = {r.n_trace_mse:.5f} ± {r.n_stderr:.5f}  (n1*C^n1 = {r.n_cn_bound:.5f})")
    elif cfg.command == "diagnostics":
        n = int(cfg.simulation.get("n", 1024))
        strategy = make_strategy(s.model, s.G, s.opts, s.pitch, 1, s.warm)
        kw = {}
        if "deltas" in cfg.simulation:
            kw["deltas"] = tuple(cfg.simulation["deltas"])
        rep = regularity_diagnostics(s.model, s.theta, strategy, n, s.trials, s.seed, s.G, workers=s.workers, **kw)
        results = {"n": rep.n, "trials": rep.trials, "failures": rep.failures}
        diags = {"exceed_probability": rep.exceed_probability, "conditional_mse": rep.conditional_mse,
                 "continuity_probe": rep.continuity_probe}
        for d, p in rep.exceed_probability:
            summary.append(f"P(|check - theta| > {d}) = {p:.4f}")
    else:  # pragma: no cover
        _fail("command", "unknown")
    return results, diags, reports, summary


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def emit_study_table(reports, path):
    """CSV with one row per n (ascending) and the fixed column contract."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to write")
    rows = sorted(reports, key=lambda r: r.n)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TABLE_COLUMNS)
            for r in rows:
                w.writerow([_fmt(r.n), _fmt(r.trials), _fmt(r.trace_mse), _fmt(r.n_trace_mse), _fmt(r.mc_stderr),
                            _fmt(r.c_bound), _fmt(r.sld_bound), _fmt(r.n_cn_bound)])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None
    return Path(path)


def read_study_table(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append({k: (None if v == "" else (int(v) if k in ("n", "trials") else float(v))) for k, v in row.items()})
    return out


def _emit_flat_table(results, path):
    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k, v in obj.items():
                yield from walk(f"{prefix}.{k}" if prefix else str(k), v)
        elif isinstance(obj, (int, float, str, bool)) or obj is None:
            yield prefix, obj

    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["key", "value"])
            for k, v in walk("", results):
                w.writerow([k, _fmt(v) if isinstance(v, float) else v])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


def run(cfg: RunConfig, out_dir=None):
    """Execute ``cfg`` and write artifacts; returns the exit status."""
    out = Path(out_dir or cfg.output.get("dir", "qcrlab-out"))
    try:
        results, diags, reports, summary = execute(cfg)
        out.mkdir(parents=True, exist_ok=True)
        doc = {
            "version": __version__,
            "numeric_policy": DEFAULT_POLICY.as_dict(),
            "config_echo": cfg.raw,
            "results": results,
            "diagnostics": diags,
        }
        result_path = out / cfg.output.get("result", "result.json")
        table_path = out / cfg.output.get("table", "table.csv")
        try:
            result_path.write_text(json.dumps(doc, indent=2, default=_json_default))
        except OSError as exc:
            raise IoError(f"cannot write {result_path}: {exc}") from None
        if reports:
            emit_study_table(reports, table_path)
        else:
            _emit_flat_table(results, table_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except QcrError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    for line in summary:
        print(line)
    print(f"wrote {result_path} and {table_path}")
    return 0


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(type(obj).__name__)


def build_parser():
    p = argparse.ArgumentParser(prog="qcrlab", description="Quantum Cramér-Rao bounds and two-stage estimation studies.")
    p.add_argument("command", nargs="?", choices=COMMANDS, help="overrides the config's command field")
    p.add_argument("-c", "--config", required=True, help="YAML run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. simulation.trials=500 (repeatable)")
    p.add_argument("--out-dir", help="directory for result.json and the CSV table")
    p.add_argument("--workers", type=int, help="worker processes (does not change results)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    overrides = list(args.overrides)
    if args.workers is not None:
        overrides.append(f"simulation.workers={args.workers}")
    try:
        cfg = load_config(args.config, overrides, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return run(cfg, args.out_dir)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
