"""Named experiment presets, one per reproduced figure.

Each preset takes a parameter dict (defaults below, overridable from the
command line), a seed, an output directory and a worker count. It writes its
artifacts into the directory and returns them, together with the labels of
any sweep cells that failed.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import domino, geometry, quadratic, resource, scaling
from .optimizers import OptimizerSpec
from .taskdist import TaskDistribution, correlation_matrix, make_powerlaw, make_task_vectors
from .trajectory import Trajectory, _json_default


@dataclass
class Outcome:
    files: list = field(default_factory=list)
    failed: list = field(default_factory=list)


@dataclass(frozen=True)
class Preset:
    name: str
    figure: str
    summary: str
    fn: Callable
    defaults: dict


PRESETS: dict = {}


def preset(name: str, figure: str, summary: str, **defaults):
    def wrap(fn):
        PRESETS[name] = Preset(name, figure, summary, fn, defaults)
        return fn
    return wrap


# -- atomic writers --------------------------------------------------------------

def _atomic_write(path: Path, write: Callable):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_rows(path: Path, header, rows) -> Path:
    def w(fh):
        cw = csv.writer(fh)
        cw.writerow(header)
        cw.writerows(rows)
    return _atomic_write(Path(path), w)


def write_dicts(path: Path, rows: list) -> Path:
    header = list(rows[0]) if rows else []
    return write_rows(path, header, [[r[k] for k in header] for r in rows])


def write_json(path: Path, obj) -> Path:
    return _atomic_write(Path(path), lambda fh: json.dump(obj, fh, indent=2, default=_json_default))


def write_traj(path: Path, traj: Trajectory) -> Path:
    def w(fh):
        cw = csv.writer(fh)
        cw.writerow(traj.columns())
        for row in traj.rows():
            cw.writerow(row)
    return _atomic_write(Path(path), w)


def _map(fn, cells, workers: int):
    """Run ``fn`` on every cell; failures come back as exceptions, not raised."""
    def safe(c):
        try:
            return fn(c)
        except Exception as err:          # noqa: BLE001 - recorded in the manifest
            return err
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as ex:
            futs = [ex.submit(fn, c) for c in cells]
            out = []
            for f in futs:
                try:
                    out.append(f.result())
                except Exception as err:  # noqa: BLE001
                    out.append(err)
            return out
    return [safe(c) for c in cells]


def _opt(d: dict) -> OptimizerSpec:
    return OptimizerSpec(**d)


# -- Geometry presets ----------------------------------------------------------------

def _fig2_cell(c):
    algo, lr, p1, prm, seed = c
    t1, t2, traj = geometry.two_task_times(p1, OptimizerSpec(algo, lr=lr), prm["n_dim"], prm["batch_size"],
                                           prm["n_steps"], prm["loss_below"], prm["record_every"], seed)
    return algo, p1, t1, t2, traj


@preset("fig2_domino_ratio", "2", "two tasks: convergence-time ratio t2/t1 per optimizer",
        p1=[0.5, 0.6, 0.7, 0.8, 0.9, 0.95], optimizers={"sgd": 3e-2, "signgd": 3e-4, "adam": 3e-4},
        n_dim=1000, batch_size=128, n_steps=50_000, loss_below=0.01, record_every=5)
def fig2(prm, seed, out, workers):
    cells = [(a, lr, p1, prm, seed) for a, lr in prm["optimizers"].items() for p1 in prm["p1"]]
    res = _map(_fig2_cell, cells, workers)
    o, rows = Outcome(), []
    for c, r in zip(cells, res):
        if isinstance(r, Exception):
            o.failed.append(f"{c[0]} p1={c[2]}: {r}")
            continue
        algo, p1, t1, t2, traj = r
        ratio = t2 / t1 if t1 and t2 else float("nan")
        rows.append([algo, p1, 1 - p1, p1 / (1 - p1), t1, t2, ratio])
        o.files.append(write_traj(out / f"traj_{algo}_p{p1}.csv", traj))
    o.files.append(write_rows(out / "domino_ratio.csv", ["optimizer", "p1", "p2", "p1_over_p2", "t1", "t2", "ratio"], rows))
    return o


def _geo_cell(c):
    kw, opt, n_steps, rec, align, seed, meta = c
    sys = geometry.build_system(**kw, seed=seed)
    return geometry.run(sys, opt, n_steps, rec, record_align=align, seed=seed + 1, meta=meta)


@preset("fig3_sequential", "3", "power-law tasks under SignGD, skills and n_align",
        alphas=[1.0, 2.0, 4.0], n_tasks=[2, 3, 4, 5, 10], n_dim=1000, batch_size=128,
        optimizer={"algo": "signgd", "lr": 3e-4}, n_steps=6000, record_every=10)
def fig3(prm, seed, out, workers):
    cells = []
    for a in prm["alphas"]:
        for n in prm["n_tasks"]:
            kw = dict(n_task=n, n_dim=prm["n_dim"], alpha=a, batch_size=prm["batch_size"])
            cells.append((kw, _opt(prm["optimizer"]), prm["n_steps"], prm["record_every"], True, seed,
                          {"alpha": a}))
    o = Outcome()
    for c, r in zip(cells, _map(_geo_cell, cells, workers)):
        tag = f"alpha{c[0]['alpha']}_n{c[0]['n_task']}"
        if isinstance(r, Exception):
            o.failed.append(f"{tag}: {r}")
        else:
            o.files.append(write_traj(out / f"traj_{tag}.csv", r))
    return o


@preset("fig4_underparam", "4", "n_task > n_dim: Geometry vs correlated Resource (mse and xent)",
        n_tasks=[5, 10, 20, 40, 100], n_dim=10, alpha=1.0, batch_size=128,
        optimizer={"algo": "signgd", "lr": 3e-4}, n_steps=5000, record_every=10, N0=0.1)
def fig4(prm, seed, out, workers):
    o = Outcome()
    opt = _opt(prm["optimizer"])
    for loss_kind in ("mse", "xent"):
        for n in prm["n_tasks"]:
            tag = f"{loss_kind}_n{n}"
            try:
                dist = make_powerlaw(n, prm["alpha"])
                tv = make_task_vectors(n, prm["n_dim"], "random", seed)
                gsys = geometry.GeometrySystem(tv, dist, loss_kind, 0.0, prm["batch_size"])
                gt = geometry.run(gsys, opt, prm["n_steps"], prm["record_every"], seed=seed + 1)
                variant = "correlated_mse" if loss_kind == "mse" else "correlated_xent"
                rsys = resource.ResourceSystem.from_geometry(dist, prm["n_dim"], opt.lr, N0=prm["N0"],
                                                             variant=variant, corr=correlation_matrix(tv))
                rt = resource.integrate(rsys, float(prm["n_steps"]), t_eval=gt.steps.astype(float))
                o.files.append(write_traj(out / f"geometry_{tag}.csv", gt))
                o.files.append(write_traj(out / f"resource_{tag}.csv", rt))
            except Exception as err:  # noqa: BLE001
                o.failed.append(f"{tag}: {err}")
    return o


# -- Resource presets -----------------------------------------------------------------

@preset("fig5_N0_effect", "5", "Resource model skill curves for several N0",
        n_task=10, alpha=2.0, N0=[0.0, 0.01, 0.1, 1.0], eta_eff=1.0, t_end=20.0, n_out=2001)
def fig5(prm, seed, out, workers):
    o = Outcome()
    dist = make_powerlaw(prm["n_task"], prm["alpha"])
    for n0 in prm["N0"]:
        traj = resource.integrate(resource.ResourceSystem(dist, prm["eta_eff"], n0), prm["t_end"], n_out=prm["n_out"])
        o.files.append(write_traj(out / f"resource_N0_{n0}.csv", traj))
    return o


def _n0_curve(c):
    axis, grid, base = c
    return axis, resource.N0_response_curves(axis, grid, base)


@preset("fig6_N0_calibration", "6", "fitted N0 against Geometry runs, and its response to lr/noise/batch",
        base={}, lr=[1e-4, 3e-4, 1e-3, 3e-3], noise=[0.0, 0.1, 0.3, 1.0], batch=[32, 128, 512, 0],
        distributions=[{"alpha": 2.0}, {"alpha": 4.0}, {"n_task": 100}, {"dist_kind": "exponential", "alpha": 0.5}])
def fig6(prm, seed, out, workers):
    o = Outcome()
    base = resource.N0Base(**{**prm["base"], "seed": seed})
    fits = []
    for i, change in enumerate(prm["distributions"]):
        cfg = resource.N0Base(**{**base.__dict__, **change})
        try:
            n0, res, gt, rt = resource.fit_N0_for(cfg, return_trajectories=True)
            fits.append({**change, "N0": n0, "residual": res})
            o.files.append(write_traj(out / f"geometry_dist{i}.csv", gt))
            o.files.append(write_traj(out / f"resource_dist{i}.csv", rt))
        except Exception as err:  # noqa: BLE001
            o.failed.append(f"distribution {change}: {err}")
    o.files.append(write_json(out / "N0_by_distribution.json", fits))
    cells = [(axis, prm[axis], base) for axis in ("lr", "noise", "batch")]
    for c, r in zip(cells, _map(_n0_curve, cells, workers)):
        if isinstance(r, Exception):
            o.failed.append(f"{c[0]} curve: {r}")
            continue
        axis, table = r
        o.files.append(write_rows(out / f"N0_vs_{axis}.csv", [axis, "N0", "residual"], table))
    return o


# -- scaling --------------------------------------------------------------------------------

def _step_cell(c):
    return geometry.step_scaling_run(c)


@preset("fig7_scaling", "7", "alpha_N from a dimension sweep and alpha_S from loss-vs-steps",
        dims=[16, 32, 64, 128, 250], n_task=1000, alpha_N_alpha=1.0, n_steps=10_000, batch_size=128,
        lr=0.01, record_every=100, alpha_S_alphas=[2.0, 4.0], alpha_S_steps=12_000)
def fig7(prm, seed, out, workers):
    o = Outcome()
    sweep = geometry.DimSweep(prm["dims"], prm["n_task"], prm["alpha_N_alpha"], OptimizerSpec("signgd", lr=prm["lr"]),
                              prm["n_steps"], prm["batch_size"], record_every=prm["record_every"], seed=seed)
    reports = {}
    try:
        table = geometry.loss_vs_dim_sweep(sweep, workers)
        o.files.append(write_rows(out / "loss_vs_dim.csv", ["n_dim", "loss"], table))
        rep = scaling.exponent_report(table, "dims", (min(prm["dims"]), max(prm["dims"])), prm["alpha_N_alpha"])
        reports["alpha_N"] = rep.to_dict()
    except Exception as err:  # noqa: BLE001
        o.failed.append(f"dimension sweep: {err}")
    cells = [geometry.StepScaling(alpha=a, n_steps=prm["alpha_S_steps"], seed=seed) for a in prm["alpha_S_alphas"]]
    for c, r in zip(cells, _map(_step_cell, cells, workers)):
        if isinstance(r, Exception):
            o.failed.append(f"alpha_S alpha={c.alpha}: {r}")
            continue
        traj, window = r
        o.files.append(write_traj(out / f"loss_vs_steps_alpha{c.alpha}.csv", traj))
        reports[f"alpha_S_alpha{c.alpha}"] = scaling.exponent_report(traj, "steps", window, c.alpha).to_dict()
    dcfg = domino.DominoConfig(1000, 1.0)
    t = np.geomspace(10, 300, 200)
    loss = domino.loss_curve(dcfg, make_powerlaw(1000, 3.0), t)
    reports["domino_alpha3"] = scaling.exponent_report(np.column_stack([t, loss]), "steps", (10, 300), 3.0).to_dict()
    o.files.append(write_json(out / "fit_report.json", reports))
    return o


@preset("fig8_parity_scaling", "8", "multitask sparse parity scaling for two Adam beta settings (desk size)",
        n_tasks=100, n=100, k=3, batch_size=4096, n_steps=4000, widths=[32, 64, 128, 256],
        betas=[[0.9, 0.999], [0.9, 0.9]], alphas=[1.0], seeds=[0], window=[400, 4000])
def fig8(prm, seed, out, workers):
    from .mlplab.experiments import ParityScalingConfig, experiment_parity_scaling
    cfg = ParityScalingConfig(n_tasks=prm["n_tasks"], n=prm["n"], k=prm["k"], batch_size=prm["batch_size"],
                              n_steps=prm["n_steps"], widths=prm["widths"], betas=[tuple(b) for b in prm["betas"]],
                              alphas=prm["alphas"])
    tables = experiment_parity_scaling(cfg, seeds=[seed + s for s in prm["seeds"]])
    o = Outcome()
    o.files.append(write_dicts(out / "loss_vs_step.csv", tables["steps"]))
    o.files.append(write_dicts(out / "loss_vs_params.csv", tables["params"]))
    fits = []
    for b in cfg.betas:
        for a in cfg.alphas:
            rows = [r for r in tables["params"] if (r["beta1"], r["beta2"]) == tuple(b) and r["alpha"] == a]
            try:
                fit = scaling.fit_with_error([r["n_params"] for r in rows], [r["loss"] for r in rows])
                fits.append({"betas": list(b), "alpha": a, "axis": "params", **fit.to_dict()})
            except ValueError as err:
                o.failed.append(f"alpha_N betas={b}: {err}")
            for w in cfg.widths:
                pts = [r for r in tables["steps"] if (r["beta1"], r["beta2"]) == tuple(b) and r["alpha"] == a
                       and r["width"] == w and r["step"] > 0]
                try:
                    fit = scaling.fit_with_error([r["step"] for r in pts], [r["loss"] for r in pts], prm["window"])
                    fits.append({"betas": list(b), "alpha": a, "width": w, "axis": "steps", **fit.to_dict()})
                except ValueError as err:
                    o.failed.append(f"alpha_S betas={b} width={w}: {err}")
    o.files.append(write_json(out / "fit_report.json", fits))
    return o


# -- quadratic --------------------------------------------------------------------------------

@preset("fig9_quadratic", "9", "hierarchical quadratic: SGD vs SignGD, aligned vs Hadamard-rotated",
        lr={"sgd": 0.05, "signgd": 1e-3}, n_steps=5000)
def fig9(prm, seed, out, workers):
    o = Outcome()
    for rot in ("identity", "hadamard"):
        q = quadratic.QuadraticLoss(rotation=quadratic.hadamard4() if rot == "hadamard" else None)
        for algo, lr in prm["lr"].items():
            traj = quadratic.run_quadratic(q, OptimizerSpec(algo, lr=lr), n_steps=prm["n_steps"])
            rows = [[int(k), *traj.task_losses[k].tolist(), float(traj.total_loss[k])] for k in range(len(traj))]
            o.files.append(write_rows(out / f"quadratic_{algo}_{rot}.csv",
                                      ["step", "loss_1", "loss_2", "loss_3", "loss_4", "total"], rows))
    return o


@preset("fig10_optimizers", "10", "Adam vs AdEMAMix vs Lion on the Geometry model",
        n_tasks=[10, 40], sigmas=[0.0, 0.2], n_dim=1000, alpha=1.0, batch_size=128, lr=3e-4,
        algos=["adam", "ademamix", "lion"], n_steps=15_000, record_every=50)
def fig10(prm, seed, out, workers):
    cells = []
    for n in prm["n_tasks"]:
        for sg in prm["sigmas"]:
            for algo in prm["algos"]:
                kw = dict(n_task=n, n_dim=prm["n_dim"], alpha=prm["alpha"], batch_size=prm["batch_size"],
                          noise_sigma=sg)
                cells.append((kw, OptimizerSpec(algo, lr=prm["lr"]), prm["n_steps"], prm["record_every"], False,
                              seed, {"algo": algo}))
    o = Outcome()
    for c, r in zip(cells, _map(_geo_cell, cells, workers)):
        tag = f"{c[6]['algo']}_n{c[0]['n_task']}_sigma{c[0]['noise_sigma']}"
        if isinstance(r, Exception):
            o.failed.append(f"{tag}: {r}")
        else:
            o.files.append(write_traj(out / f"traj_{tag}.csv", r))
    return o


# -- MLP presets ------------------------------------------------------------------------------

def _grok_cell(c):
    from .mlplab.experiments import GrokkingConfig, experiment_grokking
    algo, wd, seed, n_steps = c
    return experiment_grokking(algo, wd, seed, GrokkingConfig(n_steps=n_steps))


@preset("fig11_grokking", "11", "modular addition: Adam vs SignGD, with and without weight decay",
        algos=["signgd", "adam"], weight_decays=[0.0, 0.03], seeds=[0], n_steps=10_000)
def fig11(prm, seed, out, workers):
    cells = [(a, wd, seed + s, prm["n_steps"]) for a in prm["algos"] for wd in prm["weight_decays"] for s in prm["seeds"]]
    o = Outcome()
    for c, r in zip(cells, _map(_grok_cell, cells, workers)):
        tag = f"{c[0]}_wd{c[1]}_seed{c[2]}"
        if isinstance(r, Exception):
            o.failed.append(f"{tag}: {r}")
        else:
            o.files.append(r.to_csv(out / f"grokking_{tag}.csv"))
    return o


def _comp_cell(c):
    from .mlplab.experiments import experiment_compositional_parity
    ablation, seed = c
    return experiment_compositional_parity(seed, ablation)


@preset("fig13_compositional", "13", "compositional vs independent third parity, MLP and gated Resource model",
        seeds=[0, 1, 2, 3, 4], eta_eff=2e-3, N0=0.5, gamma=0.01, t_end=6000.0,
        ablation_p3=[0.0045, 0.08], ablation_switch=2000.0)
def fig13(prm, seed, out, workers):
    cells = [(ab, seed + s) for ab in (False, True) for s in prm["seeds"]]
    o, rows = Outcome(), []
    for c, r in zip(cells, _map(_comp_cell, cells, workers)):
        tag = f"{'ablation' if c[0] else 'dependent'}_seed{c[1]}"
        if isinstance(r, Exception):
            o.failed.append(f"{tag}: {r}")
            continue
        o.files.append(r.to_csv(out / f"parity_{tag}.csv"))
        rows.append([tag, *(r.success_times or [None] * 3)])
    o.files.append(write_rows(out / "success_times.csv", ["run", "t1", "t2", "t3"], rows))
    # Resource counterparts: equal frequencies, AND gate on task 3 / scheduled p3 for the ablation
    ones = TaskDistribution(np.ones(3), None, "explicit")
    gates = resource.GateSet([resource.Gate(2, "and", (0, 1), prm["gamma"])], 3)
    dep = resource.ResourceSystem(ones, prm["eta_eff"], prm["N0"], gates=gates)
    lo, hi = prm["ablation_p3"]
    abl = resource.ResourceSystem(TaskDistribution(np.array([1.0, 1.0, lo])), prm["eta_eff"], prm["N0"],
                                  schedule=[(prm["ablation_switch"], [1.0, 1.0, hi])])
    o.files.append(write_traj(out / "resource_dependent.csv", resource.integrate(dep, prm["t_end"])))
    o.files.append(write_traj(out / "resource_ablation.csv", resource.integrate(abl, prm["t_end"])))
    return o


@preset("fig14_gates", "14", "Resource model with dependency gates: chain, AND tree, OR tree",
        gamma=resource.PRESET_GATE_GAMMA, N0=0.1, chain_p=[0.2, 0.3, 0.5], t_end=150.0, n_out=15001)
def fig14(prm, seed, out, workers):
    o = Outcome()
    systems = {"chain": resource.chain_system(prm["chain_p"], prm["gamma"], prm["N0"]),
               "tree_and": resource.hierarchy_system("and", prm["gamma"], prm["N0"]),
               "tree_or": resource.hierarchy_system("or", prm["gamma"], prm["N0"])}
    times = {}
    for name, sys in systems.items():
        traj = resource.integrate(sys, prm["t_end"], n_out=prm["n_out"])
        o.files.append(write_traj(out / f"gates_{name}.csv", traj))
        times[name] = resource.completion_times(traj)
    o.files.append(write_json(out / "completion_times.json", times))
    return o


@preset("fig15_modular_geometry", "15", "one-hot (modular) vs random task vectors in the Geometry model",
        n_task=100, dims=[100, 200, 400, 800], alpha=1.0, batch_size=128, lr=0.01, n_steps=5000,
        record_every=50, tail=0.1)
def fig15(prm, seed, out, workers):
    o, rows = Outcome(), []
    opt = OptimizerSpec("signgd", lr=prm["lr"])
    dist = make_powerlaw(prm["n_task"], prm["alpha"])
    for d in prm["dims"]:
        losses = {}
        for mode in ("onehot", "random"):
            try:
                tv = make_task_vectors(prm["n_task"], d, mode, seed + d)
                traj = geometry.run(geometry.GeometrySystem(tv, dist, "mse", 0.0, prm["batch_size"]), opt,
                                    prm["n_steps"], prm["record_every"], seed=seed + 1)
                o.files.append(write_traj(out / f"traj_{mode}_dim{d}.csv", traj))
                k = max(1, int(round(prm["tail"] * (len(traj) - 1))))
                losses[mode] = float(np.mean(traj.total_loss[-k:]))
            except Exception as err:  # noqa: BLE001
                o.failed.append(f"{mode} dim={d}: {err}")
        if len(losses) == 2:
            rows.append([d, losses["random"], losses["onehot"], losses["random"] / losses["onehot"]])
    o.files.append(write_rows(out / "modular_speedup.csv", ["n_dim", "loss_nonmodular", "loss_modular", "speedup"], rows))
    o.files.append(write_json(out / "timing_algebra.json",
                              {str(n): domino.modular_speedup(n, max(prm["dims"])).__dict__ for n in (1, 7, 100)}))
    return o


@preset("fig16_modularity", "16", "sparse-input regression: success times of modular vs non-modular MLPs",
        n_seeds=20)
def fig16(prm, seed, out, workers):
    from .mlplab.experiments import experiment_modularity, median_ratio
    o = Outcome()
    summary = {}
    for modular in (False, True):
        pairs, _ = experiment_modularity(modular, prm["n_seeds"], seed, workers=workers)
        tag = "modular" if modular else "nonmodular"
        rows = [[seed + i, t1, t2] for i, (t1, t2) in enumerate(pairs)]
        o.files.append(write_rows(out / f"times_{tag}.csv", ["seed", "t1", "t2"], rows))
        summary[tag] = {"median_t2_over_t1": median_ratio(pairs),
                        "unfinished": sum(1 for t1, t2 in pairs if t1 is None or t2 is None)}
    o.files.append(write_json(out / "summary.json", summary))
    return o


@preset("fig17_collapse", "17", "learning-curve collapse u^(1/p) in Geometry and the fitted Resource model",
        base={})
def fig17(prm, seed, out, workers):
    o = Outcome()
    base = resource.N0Base(**{**prm["base"], "seed": seed})
    n0, res, gt, rt = resource.fit_N0_for(base, return_trajectories=True)
    p = make_powerlaw(base.n_task, base.alpha).p
    for name, traj in (("geometry", gt), ("resource", rt)):
        u = np.clip(1.0 - traj.skills, 0.0, None)
        c = u ** (1.0 / p)
        rows = [[int(s), *c[k].tolist()] for k, s in enumerate(traj.steps)]
        o.files.append(write_rows(out / f"collapse_{name}.csv", ["step"] + [f"C_{i + 1}" for i in range(len(p))], rows))
    o.files.append(write_json(out / "fit.json", {"N0": n0, "residual": res}))
    return o


def describe() -> list:
    return [(p.name, p.figure, p.summary) for p in PRESETS.values()]
