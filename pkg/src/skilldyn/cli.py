"""Command-line runner: named presets, JSON config files, manifests and plot data.

    skilldyn run <preset|config.json> [--seed N] [--out DIR] [--override k=v ...] [--workers N]
    skilldyn validate <config.json>
    skilldyn plotdata <rundir> <kind>
    skilldyn list-presets

Exit codes: 0 success, 1 config error, 2 runtime fault, 3 partial sweep failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import itertools
import json
import os
import re
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import presets as P

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3

TOP_KEYS = ("experiment", "model", "optimizer", "sweep", "seeds", "output", "record_every")
PRESET_KEYS = ("experiment", "preset", "params", "seed")
OPTIMIZER_KEYS = ("algo", "lr", "beta1", "beta2", "beta3", "mix_alpha", "eps", "weight_decay")

_DIST = {"dist": "powerlaw", "n_task": 10, "alpha": 1.0, "p": None}
MODEL_DEFAULTS = {
    "geometry": {**_DIST, "n_dim": 1000, "vectors": "orthogonalized", "loss": "mse", "batch_size": 128,
                 "noise_sigma": 0.0, "n_steps": 5000},
    "resource": {**_DIST, "eta_eff": 1.0, "N0": 0.0, "variant": "independent_mse", "gates": [],
                 "t_end": 100.0, "n_out": 1001},
    "domino": {**_DIST, "t0": 1.0, "n_learnable": None, "loss": "mse", "t_end": None, "n_out": 1001},
    "quadratic": {"weights": [1.0, 0.1, 0.01, 0.001], "rotation": "identity", "n_steps": 5000},
    "mlplab": {"task": "grokking", "params": {}},
}
MLP_TASKS = ("compositional_parity", "grokking", "modularity", "parity_scaling")


class ConfigError(ValueError):
    def __init__(self, errors: list):
        super().__init__("\n".join(errors))
        self.errors = errors


# -- validation -------------------------------------------------------------------

def _line_of(text: str, path: list) -> Optional[int]:
    """Line of the key at ``path`` in the raw JSON text, found by walking the keys in order."""
    pos = 0
    for key in path:
        if isinstance(key, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if m is None:
            return None
        pos = m.start()
    return text.count("\n", 0, pos) + 1 if path else None


class _Checker:
    def __init__(self, text: str):
        self.text = text
        self.errors: list = []

    def err(self, path: list, msg: str):
        where = ".".join(str(k) for k in path) or "<root>"
        line = _line_of(self.text, path)
        self.errors.append(f"line {line}: {where}: {msg}" if line else f"{where}: {msg}")

    def unknown(self, d: dict, allowed, path: list):
        for k in d:
            if k not in allowed:
                self.err(path + [k], f"unknown key {k!r} (allowed: {', '.join(allowed)})")

    def num(self, d, key, path, lo=None, hi=None, integer=False, strict_lo=False, optional=False):
        v = d.get(key)
        if v is None and optional:
            return
        ok_type = isinstance(v, int) if integer else isinstance(v, (int, float))
        if isinstance(v, bool) or not ok_type:
            self.err(path + [key], f"expected {'an integer' if integer else 'a number'}, got {v!r}")
            return
        if lo is not None and (v <= lo if strict_lo else v < lo):
            self.err(path + [key], f"must be {'>' if strict_lo else '>='} {lo}, got {v}")
        if hi is not None and v > hi:
            self.err(path + [key], f"must be <= {hi}, got {v}")

    def choice(self, d, key, options, path):
        if d.get(key) not in options:
            self.err(path + [key], f"must be one of {list(options)}, got {d.get(key)!r}")


def _check_dist(c: _Checker, m: dict, path: list):
    c.choice(m, "dist", ("powerlaw", "exponential", "explicit"), path)
    c.num(m, "n_task", path, lo=1, integer=True)
    c.num(m, "alpha", path, lo=0)
    if m.get("dist") == "explicit":
        p = m.get("p")
        if not isinstance(p, list) or not p or not all(isinstance(x, (int, float)) and x > 0 for x in p):
            c.err(path + ["p"], "explicit distributions need a non-empty list of positive frequencies")
        elif len(p) != m.get("n_task"):
            c.err(path + ["p"], f"has {len(p)} entries but n_task is {m.get('n_task')}")


def _check_model(c: _Checker, m: dict, kind: str):
    path = ["model"]
    if kind in ("geometry", "resource", "domino"):
        _check_dist(c, m, path)
    if kind == "geometry":
        c.num(m, "n_dim", path, lo=1, integer=True)
        c.choice(m, "vectors", ("random", "orthogonalized", "onehot"), path)
        c.choice(m, "loss", ("mse", "xent"), path)
        c.num(m, "batch_size", path, lo=0, integer=True)
        c.num(m, "noise_sigma", path, lo=0)
        c.num(m, "n_steps", path, lo=1, integer=True)
        if m.get("vectors") == "orthogonalized" and isinstance(m.get("n_task"), int) \
                and isinstance(m.get("n_dim"), int) and m["n_task"] > m["n_dim"]:
            c.err(path + ["vectors"], "orthogonalized vectors need n_task <= n_dim")
    elif kind == "resource":
        c.num(m, "eta_eff", path, lo=0, strict_lo=True)
        c.num(m, "N0", path, lo=0)
        c.choice(m, "variant", ("independent_mse", "correlated_mse", "correlated_xent"), path)
        c.num(m, "t_end", path, lo=0, strict_lo=True)
        c.num(m, "n_out", path, lo=2, integer=True)
        gates = m.get("gates")
        if not isinstance(gates, list):
            c.err(path + ["gates"], "must be a list of {task, kind, parents, gamma}")
        else:
            for i, g in enumerate(gates):
                if not isinstance(g, dict):
                    c.err(path + ["gates", i], "must be an object")
                    continue
                c.unknown(g, ("task", "kind", "parents", "gamma"), path + ["gates", i])
                c.num(g, "task", path + ["gates", i], lo=1, integer=True)
                c.choice(g, "kind", ("and", "or"), path + ["gates", i])
                if not isinstance(g.get("parents"), list) or not g.get("parents"):
                    c.err(path + ["gates", i, "parents"], "needs a non-empty list of 1-based task numbers")
                c.num(g, "gamma", path + ["gates", i], lo=0, strict_lo=True, optional=True)
    elif kind == "domino":
        c.num(m, "t0", path, lo=0, strict_lo=True)
        c.num(m, "n_learnable", path, lo=0, integer=True, optional=True)
        c.choice(m, "loss", ("mse", "xent"), path)
        c.num(m, "t_end", path, lo=0, strict_lo=True, optional=True)
        c.num(m, "n_out", path, lo=2, integer=True)
    elif kind == "quadratic":
        w = m.get("weights")
        if not isinstance(w, list) or not w or not all(isinstance(x, (int, float)) and x > 0 for x in w):
            c.err(path + ["weights"], "must be a non-empty list of positive numbers")
        c.choice(m, "rotation", ("identity", "hadamard"), path)
        if m.get("rotation") == "hadamard" and isinstance(w, list) and len(w) != 4:
            c.err(path + ["rotation"], "the Hadamard rotation is defined for 4 components")
        c.num(m, "n_steps", path, lo=1, integer=True)
    elif kind == "mlplab":
        c.choice(m, "task", MLP_TASKS, path)
        if not isinstance(m.get("params"), dict):
            c.err(path + ["params"], "must be an object")
        elif m.get("task") in MLP_TASKS:
            allowed = [f.name for f in fields(_mlp_config_cls(m["task"]))]
            c.unknown(m["params"], allowed, path + ["params"])


def _mlp_config_cls(task: str):
    from .mlplab import experiments as E
    return {"compositional_parity": E.CompositionalConfig, "grokking": E.GrokkingConfig,
            "modularity": E.ModularityConfig, "parity_scaling": E.ParityScalingConfig}[task]


def normalize_config(raw, text: str = "") -> dict:
    """Fill defaults and check every key and range; raises ConfigError with all problems at once."""
    c = _Checker(text)
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: a config must be a JSON object"])
    if "preset" in raw:
        return _normalize_preset(raw, c)
    c.unknown(raw, TOP_KEYS, [])
    cfg = {"experiment": raw.get("experiment", "run")}
    if not isinstance(cfg["experiment"], str):
        c.err(["experiment"], "must be a string")

    model = raw.get("model", {})
    if not isinstance(model, dict):
        c.err(["model"], "must be an object")
        model = {}
    kind = model.get("kind", "geometry")
    if kind not in MODEL_DEFAULTS:
        c.err(["model", "kind"], f"must be one of {list(MODEL_DEFAULTS)}, got {kind!r}")
        kind = "geometry"
    defaults = MODEL_DEFAULTS[kind]
    c.unknown({k: v for k, v in model.items() if k != "kind"}, list(defaults), ["model"])
    m = {"kind": kind, **copy.deepcopy(defaults), **{k: v for k, v in model.items() if k in defaults}}
    _check_model(c, m, kind)
    cfg["model"] = m

    opt = raw.get("optimizer", {})
    if not isinstance(opt, dict):
        c.err(["optimizer"], "must be an object")
        opt = {}
    c.unknown(opt, OPTIMIZER_KEYS, ["optimizer"])
    from .optimizers import OptimizerSpec
    try:
        spec = OptimizerSpec(**{"algo": "signgd", "lr": 3e-4, **{k: v for k, v in opt.items() if k in OPTIMIZER_KEYS}})
        cfg["optimizer"] = spec.to_dict()
    except (TypeError, ValueError) as e:
        c.err(["optimizer"], str(e))
        cfg["optimizer"] = opt

    sweep = raw.get("sweep", {})
    if not isinstance(sweep, dict):
        c.err(["sweep"], "must be an object mapping section.key to a list of values")
        sweep = {}
    for axis, values in sweep.items():
        sec, _, key = axis.partition(".")
        known = (sec == "model" and key in defaults) or (sec == "optimizer" and key in OPTIMIZER_KEYS)
        if not known:
            c.err(["sweep", axis], "axes are written model.<key> or optimizer.<key> with a known key")
        if not isinstance(values, list) or not values:
            c.err(["sweep", axis], "must be a non-empty list")
    cfg["sweep"] = sweep

    seeds = raw.get("seeds", [0])
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = [seeds]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        c.err(["seeds"], "must be a non-negative integer or a non-empty list of them")
    cfg["seeds"] = seeds
    cfg["output"] = raw.get("output", "runs/" + str(cfg["experiment"]))
    if not isinstance(cfg["output"], str):
        c.err(["output"], "must be a path string")
    cfg["record_every"] = raw.get("record_every", 10)
    c.num(cfg, "record_every", [], lo=1, integer=True)
    if c.errors:
        raise ConfigError(c.errors)
    return cfg


def _normalize_preset(raw: dict, c: _Checker) -> dict:
    """A preset config: the preset name, its parameters (defaults filled in) and a seed."""
    c.unknown(raw, PRESET_KEYS, [])
    name = raw["preset"]
    if name not in P.PRESETS:
        c.err(["preset"], f"unknown preset {name!r}; valid presets: {', '.join(P.PRESETS)}")
        raise ConfigError(c.errors)
    defaults = P.PRESETS[name].defaults
    params = raw.get("params", {})
    if not isinstance(params, dict):
        c.err(["params"], "must be an object")
        params = {}
    c.unknown(params, list(defaults), ["params"])
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        c.err(["seed"], f"must be a non-negative integer, got {seed!r}")
    if c.errors:
        raise ConfigError(c.errors)
    return {"experiment": raw.get("experiment", name), "preset": name,
            "params": {**copy.deepcopy(defaults), **params}, "seed": seed}


def validate_config(path) -> dict:
    """Read a JSON config file; an empty file gives the default config."""
    text = Path(path).read_text()
    if not text.strip():
        return normalize_config({}, text)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"line {e.lineno}: invalid JSON: {e.msg}"]) from None
    return normalize_config(raw, text)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=P._json_default).encode()).hexdigest()


# -- overrides --------------------------------------------------------------------

def _parse_value(s: str):
    try:
        return json.loads(s)
    except json.JSONDecodeError:
        return s


def apply_overrides(d: dict, overrides, strict: bool = True) -> dict:
    """Set dotted ``key=value`` pairs; values are parsed as JSON when they parse."""
    d = copy.deepcopy(d)
    errors = []
    for item in overrides or ():
        key, sep, val = item.partition("=")
        if not sep or not key:
            errors.append(f"override {item!r}: expected key=value")
            continue
        parts = key.split(".")
        node = d
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                if strict:
                    errors.append(f"override {key!r}: {part!r} is not a section")
                    break
                node[part] = {}
            node = node[part]
        else:
            if strict and parts[-1] not in node:
                errors.append(f"override {key!r}: unknown key (known: {', '.join(node)})")
                continue
            node[parts[-1]] = _parse_value(val)
    if errors:
        raise ConfigError(errors)
    return d


# -- config-driven runs -----------------------------------------------------------

def _dist(m: dict):
    from .taskdist import make_explicit, make_exponential, make_powerlaw
    if m["dist"] == "explicit":
        return make_explicit(m["p"], normalize=True, ordered=False)
    if m["dist"] == "exponential":
        return make_exponential(m["n_task"], m["alpha"])
    return make_powerlaw(m["n_task"], m["alpha"])


def _run_cell(cell):
    """One (model, optimizer, seed) run; writes into ``cell['dir']`` and returns the file list."""
    from . import domino, geometry, quadratic, resource
    from .optimizers import OptimizerSpec
    from .taskdist import make_task_vectors

    m, opt, seed, rec, out = cell["model"], OptimizerSpec(**cell["optimizer"]), cell["seed"], cell["record_every"], Path(cell["dir"])
    meta = {"seed": seed}
    kind = m["kind"]
    if kind == "geometry":
        dist = _dist(m)
        tv = make_task_vectors(dist.n_task, m["n_dim"], m["vectors"], seed)
        sys_ = geometry.GeometrySystem(tv, dist, m["loss"], m["noise_sigma"], m["batch_size"])
        traj = geometry.run(sys_, opt, m["n_steps"], rec, record_align=True, seed=seed + 1, meta=meta)
        return [P.write_traj(out / "trajectory.csv", traj)]
    if kind == "resource":
        dist = _dist(m)
        gates = resource.GateSet.from_config(m["gates"], dist.n_task) if m["gates"] else None
        corr = None
        if m["variant"] != "independent_mse":
            corr = np.eye(dist.n_task)
        sys_ = resource.ResourceSystem(dist, m["eta_eff"], m["N0"], m["variant"], corr, gates)
        return [P.write_traj(out / "trajectory.csv", resource.integrate(sys_, m["t_end"], n_out=m["n_out"]))]
    if kind == "domino":
        dist = _dist(m)
        dcfg = domino.DominoConfig(dist.n_task, m["t0"], m["n_learnable"])
        t_end = m["t_end"] or 1.2 * domino.total_time(dcfg)
        traj = domino.trajectory(dcfg, dist, np.linspace(0.0, t_end, m["n_out"]), m["loss"])
        return [P.write_traj(out / "trajectory.csv", traj)]
    if kind == "quadratic":
        rot = quadratic.hadamard4() if m["rotation"] == "hadamard" else None
        traj = quadratic.run_quadratic(quadratic.QuadraticLoss(np.array(m["weights"], dtype=float), rot), opt,
                                       n_steps=m["n_steps"], meta=meta)
        return [P.write_traj(out / "trajectory.csv", traj)]
    return _run_mlp(m, opt, seed, out)


def _run_mlp(m, opt, seed, out):
    from .mlplab import experiments as E
    cls = _mlp_config_cls(m["task"])
    params = dict(m["params"])
    if "lr" in {f.name for f in fields(cls)}:
        params.setdefault("lr", opt.lr)
    cfg = cls(**params)
    if m["task"] == "grokking":
        r = E.experiment_grokking(opt.algo, opt.weight_decay, seed, cfg)
    elif m["task"] == "compositional_parity":
        r = E.experiment_compositional_parity(seed, False, cfg)
    elif m["task"] == "modularity":
        pairs, results = E.experiment_modularity(False, 1, seed, cfg)
        r = results[0]
    else:
        tables = E.experiment_parity_scaling(cfg, seeds=[seed])
        return [P.write_dicts(out / "loss_vs_step.csv", tables["steps"]),
                P.write_dicts(out / "loss_vs_params.csv", tables["params"])]
    out.mkdir(parents=True, exist_ok=True)
    return [r.to_csv(out / "metrics.csv"), r.to_json(out / "result.json")]


def _cells(cfg: dict, outdir: Path) -> list:
    axes = list(cfg["sweep"].items())
    combos = list(itertools.product(*[v for _, v in axes])) if axes else [()]
    cells = []
    for i, combo in enumerate(combos):
        m, o = copy.deepcopy(cfg["model"]), dict(cfg["optimizer"])
        label = []
        for (axis, _), v in zip(axes, combo):
            sec, _, key = axis.partition(".")
            (m if sec == "model" else o)[key] = v
            label.append(f"{key}={v}")
        for s in cfg["seeds"]:
            name = f"cell{i:03d}_seed{s}"
            cells.append({"model": m, "optimizer": o, "seed": s, "record_every": cfg["record_every"],
                          "dir": str(outdir / name), "label": ", ".join(label + [f"seed={s}"])})
    return cells


def run_config(cfg: dict, outdir: Path, workers: int) -> P.Outcome:
    cells = _cells(cfg, outdir)
    outcome = P.Outcome()
    for c, r in zip(cells, P._map(_run_cell, cells, workers)):
        if isinstance(r, Exception):
            outcome.failed.append(f"{c['label']}: {type(r).__name__}: {r}")
        else:
            outcome.files += r
    return outcome


# -- manifest ------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _file_entries(outdir: Path) -> list:
    files = []
    for p in sorted(outdir.rglob("*")):
        if p.is_file() and p.name != "manifest.json" and not p.name.startswith("."):
            files.append({"path": p.relative_to(outdir).as_posix(), "sha256": _sha256(p), "bytes": p.stat().st_size})
    return files


def write_manifest(outdir: Path, resolved: dict, failed: list) -> Path:
    """Hash every file under ``outdir`` (the manifest itself aside)."""
    manifest = {"config_hash": config_hash(resolved), "status": "partial" if failed else "ok",
                "failed_cells": failed, "files": _file_entries(outdir)}
    return P.write_json(outdir / "manifest.json", manifest)


def refresh_manifest(outdir: Path) -> Optional[Path]:
    """Re-hash the files of an existing run directory, keeping its status fields."""
    path = outdir / "manifest.json"
    if not path.exists():
        return None
    manifest = json.loads(path.read_text())
    manifest["files"] = _file_entries(outdir)
    return P.write_json(path, manifest)


# -- plot data ---------------------------------------------------------------------------

PLOT_KINDS = ("skills", "losses", "align", "sweep", "fit")


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError([f"{path}: empty table"])
    return rows[0], rows[1:]


def _need(header, cols, path):
    missing = [c for c in cols if c not in header]
    if missing:
        raise ConfigError([f"{path.name}: missing columns {missing}"])


def emit_plotdata(rundir, kind: str) -> Path:
    """Long-format (series, x, y) CSV for one figure kind, written into ``rundir``."""
    rundir = Path(rundir)
    if kind not in PLOT_KINDS:
        raise ConfigError([f"unknown plot kind {kind!r}; choose from {', '.join(PLOT_KINDS)}"])
    out = []
    if kind in ("skills", "losses", "align"):
        prefix = {"skills": "s_", "losses": "loss_", "align": "align_"}[kind]
        sources = [p for p in sorted(rundir.rglob("*.csv")) if not p.name.startswith("plotdata_")]
        used = 0
        for path in sources:
            header, rows = _read_csv(path)
            if "step" not in header or not any(h.startswith(prefix) for h in header):
                continue
            used += 1
            tag = path.relative_to(rundir).with_suffix("").as_posix()
            cols = [(j, h) for j, h in enumerate(header) if h.startswith(prefix)]
            if kind == "losses" and "total_loss" in header:
                cols.append((header.index("total_loss"), "total_loss"))
            i_step = header.index("step")
            for r in rows:
                for j, h in cols:
                    series = h.replace(prefix, "task_") if h != "total_loss" else "total"
                    out.append([f"{tag}:{series}", r[i_step], r[j]])
        if not used:
            raise ConfigError([f"{rundir}: no trajectory table with 'step' and '{prefix}*' columns"])
    elif kind == "sweep":
        path = rundir / "loss_vs_dim.csv"
        if not path.exists():
            raise ConfigError([f"{rundir}: no loss_vs_dim.csv"])
        header, rows = _read_csv(path)
        _need(header, ["n_dim", "loss"], path)
        out = [["loss", r[header.index("n_dim")], r[header.index("loss")]] for r in rows]
    else:
        path = rundir / "fit_report.json"
        if not path.exists():
            raise ConfigError([f"{rundir}: no fit_report.json"])
        reports = json.loads(path.read_text())
        items = reports.items() if isinstance(reports, dict) else enumerate(reports)
        for name, rep in items:
            fit = rep.get("fit", rep)
            if "exponent" not in fit or "prefactor" not in fit or "fit_window" not in fit:
                raise ConfigError([f"{path.name}: report {name!r} lacks exponent/prefactor/fit_window"])
            lo, hi = fit["fit_window"]
            lo = max(lo, 1e-12)
            xs = np.geomspace(lo, hi, 50)
            lines = {"fit": fit["exponent"]}
            alpha = rep.get("alpha")
            if alpha is not None:
                lines["alpha-1"] = alpha - 1.0
                lines["(alpha-1)/alpha"] = (alpha - 1.0) / alpha
            y0 = fit["prefactor"] * lo ** (-fit["exponent"])
            for label, a in lines.items():
                # reference lines share the fit's value at the window start
                for x in xs:
                    out.append([f"{name}:{label}", float(x), float(y0 * (x / lo) ** (-a))])
    path = P.write_rows(rundir / f"plotdata_{kind}.csv", ["series", "x", "y"], out)
    refresh_manifest(rundir)
    return path


# -- entry point --------------------------------------------------------------------------

def run_preset(name: str, overrides=None, outdir=None, seed: int = 0, workers: Optional[int] = None,
               params: Optional[dict] = None):
    """Returns (exit status, artifact paths)."""
    if name not in P.PRESETS:
        raise ConfigError([f"unknown preset {name!r}; valid presets: {', '.join(P.PRESETS)}"])
    pre = P.PRESETS[name]
    params = apply_overrides(pre.defaults if params is None else params, overrides)
    outdir = Path(outdir or f"runs/{name}")
    outdir.mkdir(parents=True, exist_ok=True)
    resolved = {"experiment": name, "preset": name, "params": params, "seed": seed}
    P.write_json(outdir / "config.json", resolved)
    outcome = pre.fn(params, seed, outdir, workers or os.cpu_count() or 1)
    write_manifest(outdir, resolved, outcome.failed)
    return (EXIT_PARTIAL if outcome.failed else EXIT_OK), outcome.files


def _run_target(args) -> int:
    target = args.target
    if target in P.PRESETS or not Path(target).exists():
        code, files = run_preset(target, args.override, args.out, args.seed or 0, args.workers)
        print(f"{len(files)} files written to {args.out or 'runs/' + target}")
        return code
    cfg = validate_config(target)
    if "preset" in cfg:
        seed = cfg["seed"] if args.seed is None else args.seed
        code, files = run_preset(cfg["preset"], args.override, args.out, seed, args.workers, cfg["params"])
        print(f"{len(files)} files written to {args.out or 'runs/' + cfg['preset']}")
        return code
    if args.override:
        cfg = normalize_config(apply_overrides(cfg, args.override))
    if args.seed is not None:
        cfg["seeds"] = [args.seed]
    outdir = Path(args.out or cfg["output"])
    cfg["output"] = str(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    P.write_json(outdir / "config.json", cfg)
    outcome = run_config(cfg, outdir, args.workers or os.cpu_count() or 1)
    write_manifest(outdir, cfg, outcome.failed)
    for f in outcome.failed:
        print(f"failed: {f}", file=sys.stderr)
    print(f"{len(outcome.files)} files written to {outdir}")
    if outcome.failed:
        return EXIT_PARTIAL if outcome.files else EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skilldyn", description="Skill-learning dynamics experiments.")
    sub = ap.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="run a named preset or a JSON config file")
    r.add_argument("target", help="preset name or path to a config file")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted key, value parsed as JSON when possible; repeatable")
    r.add_argument("--workers", type=int, default=None, help="worker processes (default: all cores)")
    v = sub.add_parser("validate", help="check a config file and print it with defaults filled in")
    v.add_argument("config")
    pd = sub.add_parser("plotdata", help="emit long-format (series, x, y) CSV from a run directory")
    pd.add_argument("rundir")
    pd.add_argument("kind", choices=PLOT_KINDS)
    sub.add_parser("list-presets", help="list the named presets")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "list-presets":
            for name, fig, summary in P.describe():
                print(f"{name:24s} fig {fig:>3s}  {summary}")
            return EXIT_OK
        if args.verb == "validate":
            print(json.dumps(validate_config(args.config), indent=2))
            return EXIT_OK
        if args.verb == "plotdata":
            print(emit_plotdata(args.rundir, args.kind))
            return EXIT_OK
        return _run_target(args)
    except ConfigError as e:
        for line in e.errors:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - any fault inside a run maps to exit 2
        print(f"runtime fault: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
