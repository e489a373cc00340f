"""Desk-scale MLP experiments: compositional parity, grokking, modularity, parity scaling."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np

from ..optimizers import OptimizerSpec
from .data import (gen_compositional_parity, gen_multitask_parity, gen_sparse_squares,
                   make_sparse_parity_task, modular_addition_split, stratified_parity_eval)
from .net import DenseNet, Embedding
from .train import RunResult, Success, accuracy_binary, per_group, train


# -- compositional parity ----------------------------------------------------

@dataclass
class CompositionalConfig:
    n: int = 32
    hidden: int = 50
    n_samples: int = 10_000
    n_eval: int = 2048
    lr: float = 1e-3
    n_steps: int = 20_000
    eval_every: int = 50
    success_acc: float = 0.99
    dtype: str = "float32"


def experiment_compositional_parity(seed: int = 0, ablation: bool = False,
                                    cfg: Optional[CompositionalConfig] = None) -> RunResult:
    """Three parity outputs from n bits, full-batch Adam; success = eval accuracy >= 0.99 per output.

    Training stops once all three outputs have succeeded.
    """
    cfg = cfg or CompositionalConfig()
    dt = np.dtype(cfg.dtype)
    X, Y = gen_compositional_parity(cfg.n_samples, cfg.n, ablation, seed=seed, dtype=dt)
    Xe, Ye = gen_compositional_parity(cfg.n_eval, cfg.n, ablation, seed=seed + 10_000, dtype=dt)
    net = DenseNet([cfg.n, cfg.hidden, 3], "sigmoid_bce", seed=seed + 1, dtype=dt)

    def evaluate(n):
        return {"accuracy": accuracy_binary(n.predict(Xe), Ye)}

    conf = {"experiment": "compositional_parity", "ablation": ablation, **asdict(cfg)}
    return train(net, (X, Y), OptimizerSpec("adam", lr=cfg.lr), cfg.n_steps, 0, cfg.eval_every,
                 evaluate, Success("accuracy", cfg.success_acc, "ge"), seed=seed, stop_when_done=True,
                 config=conf)


# -- grokking -----------------------------------------------------------------

@dataclass
class GrokkingConfig:
    p: int = 59
    embed_dim: int = 32
    hidden: int = 100
    train_frac: float = 0.8
    lr: float = 1e-3
    n_steps: int = 10_000
    batch_size: int = 0
    eval_every: int = 100
    dtype: str = "float32"


def experiment_grokking(opt_algo: str = "signgd", weight_decay: float = 0.0, seed: int = 0,
                        cfg: Optional[GrokkingConfig] = None) -> RunResult:
    """Modular addition a + b mod p from learned token embeddings."""
    cfg = cfg or GrokkingConfig()
    if opt_algo not in ("adam", "signgd"):
        raise ValueError("opt_algo must be 'adam' or 'signgd'")
    dt = np.dtype(cfg.dtype)
    trX, trY, teX, teY = modular_addition_split(cfg.p, cfg.train_frac, seed)
    net = DenseNet([2 * cfg.embed_dim, cfg.hidden, cfg.hidden, cfg.p], "softmax_xent",
                   Embedding(cfg.p, cfg.embed_dim, 2), seed=seed + 1, dtype=dt)

    def evaluate(n):
        return {"train_acc": float((n.forward(trX).argmax(axis=1) == trY).mean()),
                "test_acc": float((n.forward(teX).argmax(axis=1) == teY).mean())}

    conf = {"experiment": "grokking", "opt_algo": opt_algo, "weight_decay": weight_decay, **asdict(cfg)}
    opt = OptimizerSpec(opt_algo, lr=cfg.lr, weight_decay=weight_decay)
    return train(net, (trX, trY), opt, cfg.n_steps, cfg.batch_size, cfg.eval_every, evaluate,
                 seed=seed, config=conf)


# -- modularity -----------------------------------------------------------------

@dataclass
class ModularityConfig:
    n_points: int = 1000
    y_zero_prob: float = 0.99
    hidden: int = 200
    lr: float = 5e-4
    n_steps: int = 20_000
    eval_every: int = 20
    success_mse: float = 1e-3
    dtype: str = "float32"


def _modularity_run(seed: int, modular: bool, cfg: ModularityConfig) -> RunResult:
    dt = np.dtype(cfg.dtype)
    X, Y = gen_sparse_squares(cfg.n_points, cfg.y_zero_prob, seed=seed, dtype=dt)
    conf = {"experiment": "modularity", "modular": modular, **asdict(cfg)}
    success = Success("mse", cfg.success_mse, "lt")
    opt = OptimizerSpec("adam", lr=cfg.lr)
    if not modular:
        net = DenseNet([2, cfg.hidden, cfg.hidden, 2], "linear_mse", seed=seed + 1, dtype=dt)

        def evaluate(n):
            return {"mse": ((n.forward(X) - Y) ** 2).mean(axis=0)}

        return train(net, (X, Y), opt, cfg.n_steps, 0, cfg.eval_every, evaluate, success,
                     seed=seed, stop_when_done=True, config=conf)

    # two disjoint halves-width networks, one per input/output pair
    half = cfg.hidden // 2
    parts = []
    for j in range(2):
        net = DenseNet([1, half, half, 1], "linear_mse", seed=seed + 1 + 7 * j, dtype=dt)
        xj, yj = X[:, j:j + 1], Y[:, j:j + 1]

        def evaluate(n, xj=xj, yj=yj):
            return {"mse": float(((n.forward(xj) - yj) ** 2).mean())}

        parts.append(train(net, (xj, yj), opt, cfg.n_steps, 0, cfg.eval_every, evaluate, success,
                           seed=seed, stop_when_done=True))
    return _merge_parts(parts, conf, seed)


def _merge_parts(parts, conf, seed) -> RunResult:
    """Combine two independently trained halves into one record on a shared step grid."""
    steps = sorted(set(parts[0].steps) | set(parts[1].steps))
    mse, loss = [], []
    for k in steps:
        row, tl = [], 0.0
        for r in parts:
            # a finished half keeps its last recorded value
            i = min(np.searchsorted(r.steps, k, side="right") - 1, len(r.steps) - 1)
            row.append(r.metrics["mse"][i])
            tl += r.train_loss[i] / 2.0
        mse.append(row)
        loss.append(tl)
    times = [r.success_times[0] if r.success_times else None for r in parts]
    return RunResult(steps, loss, {"mse": mse}, times, seed, conf)


def experiment_modularity(modular: bool, n_seeds: int = 20, seed0: int = 0,
                          cfg: Optional[ModularityConfig] = None, workers: int = 1):
    """Success times (t1, t2) per seed; returns (pairs, results)."""
    cfg = cfg or ModularityConfig()
    seeds = list(range(seed0, seed0 + n_seeds))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_modularity_run, seeds, [modular] * n_seeds, [cfg] * n_seeds))
    else:
        results = [_modularity_run(s, modular, cfg) for s in seeds]
    pairs = [tuple(r.success_times) for r in results]
    return pairs, results


def median_ratio(pairs) -> float:
    """Median of t2/t1 over seeds where both tasks succeeded (nan if none)."""
    r = [t2 / t1 for t1, t2 in pairs if t1 and t2]
    return float(np.median(r)) if r else float("nan")


# -- multitask parity scaling -------------------------------------------------------

@dataclass
class ParityScalingConfig:
    """Desk preset: smaller than the full-size study (500 subtasks, batch 20000)."""

    n_tasks: int = 100
    n: int = 100
    k: int = 3
    batch_size: int = 4096
    n_steps: int = 4000
    eval_every: int = 100
    eval_per_task: int = 64
    lr: float = 1e-3
    betas: Sequence = ((0.9, 0.999), (0.9, 0.9))
    widths: Sequence = (32, 64, 128, 256)
    alphas: Sequence = (1.0,)
    dtype: str = "float32"


def parity_run(task, width: int, betas, cfg: ParityScalingConfig, seed: int) -> RunResult:
    dt = np.dtype(cfg.dtype)
    net = DenseNet([task.n_inputs, width, 1], "sigmoid_bce", seed=seed + 1, dtype=dt)
    Xe, Ye, ce = stratified_parity_eval(task, cfg.eval_per_task, seed=seed + 20_000, dtype=dt)

    def sample(rng, b):
        X, y, _ = gen_multitask_parity(task, b, seed=rng, dtype=dt)
        return X, y

    def evaluate(n):
        out = n.forward(Xe)
        losses = n.example_losses(out, Ye)
        acc = ((out[:, 0] > 0) == (Ye > 0.5)).astype(float)
        return {"test_loss": float(losses.mean()),
                "task_loss": per_group(losses, ce, task.n_tasks),
                "task_acc": per_group(acc, ce, task.n_tasks)}

    opt = OptimizerSpec("adam", lr=cfg.lr, beta1=betas[0], beta2=betas[1])
    conf = {"experiment": "parity_scaling", "width": width, "betas": list(betas),
            "alpha": task.dist.alpha, "n_tasks": task.n_tasks, "n": task.n, "k": task.k,
            "batch_size": cfg.batch_size, "n_steps": cfg.n_steps,
            "desk_preset": "n_tasks and batch size reduced from 500 and 20000"}
    return train(net, sample, opt, cfg.n_steps, cfg.batch_size, cfg.eval_every, evaluate,
                 seed=seed, config=conf)


def experiment_parity_scaling(cfg: Optional[ParityScalingConfig] = None, seeds=(0,)):
    """Loss-vs-step and final-loss-vs-parameters tables.

    Returns ``{"steps": [...], "params": [...]}``, rows being dicts keyed by
    betas, width, alpha and seed.
    """
    cfg = cfg or ParityScalingConfig()
    steps_rows, param_rows = [], []
    for alpha in cfg.alphas:
        for seed in seeds:
            task = make_sparse_parity_task(cfg.n_tasks, cfg.n, cfg.k, alpha, seed=seed)
            for betas in cfg.betas:
                for width in cfg.widths:
                    r = parity_run(task, width, betas, cfg, seed)
                    key = {"beta1": betas[0], "beta2": betas[1], "width": width, "alpha": alpha, "seed": seed}
                    for s, loss in zip(r.steps, r.metrics["test_loss"]):
                        steps_rows.append({**key, "step": s, "loss": loss})
                    n_params = (task.n_inputs + 1) * width + (width + 1)
                    tail = r.metrics["test_loss"][-max(1, len(r.steps) // 10):]
                    param_rows.append({**key, "n_params": n_params, "loss": float(np.mean(tail))})
    return {"steps": steps_rows, "params": param_rows}
