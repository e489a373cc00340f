"""Training loop for :class:`DenseNet` with periodic evaluation and success times."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from ..optimizers import NumericFault, OptimizerSpec, OptimizerState, step as opt_step
from ..taskdist import rng_from_seed
from .net import DenseNet


class DivergenceError(RuntimeError):
    def __init__(self, step: int, loss: float, detail: str = ""):
        super().__init__(f"training diverged at step {step}: loss = {loss!r}{detail}")
        self.step = step
        self.loss = loss


@dataclass
class Success:
    """Per-task success: metric[key][i] compared against ``threshold``."""

    key: str
    threshold: float
    mode: str = "ge"   # "ge": metric >= threshold, "le": metric <= threshold, "lt": metric < threshold

    def met(self, value) -> np.ndarray:
        v = np.atleast_1d(np.asarray(value, dtype=float))
        if self.mode == "ge":
            return v >= self.threshold
        if self.mode == "le":
            return v <= self.threshold
        if self.mode == "lt":
            return v < self.threshold
        raise ValueError(f"unknown success mode {self.mode!r}")


@dataclass
class RunResult:
    steps: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    success_times: Optional[list] = None
    seed: Optional[int] = None
    config: dict = field(default_factory=dict)

    def metric(self, key: str) -> np.ndarray:
        return np.asarray(self.metrics[key])

    def final(self, key: str):
        return self.metrics[key][-1]

    def to_dict(self) -> dict:
        return {"steps": self.steps, "train_loss": self.train_loss,
                "metrics": {k: np.asarray(v).tolist() for k, v in self.metrics.items()},
                "success_times": self.success_times, "seed": self.seed, "config": self.config}

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()))
        return path

    def to_csv(self, path) -> Path:
        """One row per evaluation; array metrics are spread over ``key_1..key_n``."""
        import csv
        path = Path(path)
        cols, series = ["step", "train_loss"], [self.steps, self.train_loss]
        for k, v in self.metrics.items():
            arr = np.asarray(v, dtype=float)
            if arr.ndim == 1:
                cols.append(k)
                series.append(arr)
            else:
                for j in range(arr.shape[1]):
                    cols.append(f"{k}_{j + 1}")
                    series.append(arr[:, j])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in zip(*series):
                w.writerow([x.item() if isinstance(x, np.generic) else x for x in row])
        return path


def train(net: DenseNet, data, opt: OptimizerSpec, n_steps: int, batch_size: int = 0,
          eval_every: int = 50, evaluate: Optional[Callable[[DenseNet], dict]] = None,
          success: Optional[Success] = None, reweight: bool = False,
          lr_schedule: Optional[Callable[[int], float]] = None, seed=0,
          stop_when_done: bool = False, divergence: float = 1e6,
          config: Optional[dict] = None) -> RunResult:
    """Minibatch training of ``net`` in place.

    ``data`` is either a fixed ``(X, y)`` pair, sampled without replacement
    per step (``batch_size=0`` means full batch), or a callable
    ``(rng, batch_size) -> (X, y)`` producing fresh samples.

    With ``reweight`` the batch objective is (1/B) sum_i l_i * l_i where the
    leading l_i is a constant weight (no gradient flows through it).

    ``evaluate(net)`` returns a dict of metrics recorded every ``eval_every``
    steps and at step 0. ``success`` turns one (per-task) metric into first
    crossing steps. ``stop_when_done`` ends training once every task has met it.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    rng = rng_from_seed(seed)
    state = OptimizerState()
    result = RunResult(seed=seed if isinstance(seed, int) else None, config=dict(config or {}))
    fixed = not callable(data)
    if fixed:
        X_all, y_all = data
        n_data = len(X_all)
        if batch_size and batch_size > n_data:
            raise ValueError(f"batch_size {batch_size} exceeds the {n_data} available examples")
    first_hit: Optional[list] = None

    def record(k: int, batch_loss: float):
        nonlocal first_hit
        tl = net.loss(X_all, y_all) if fixed else batch_loss
        result.steps.append(k)
        result.train_loss.append(float(tl))
        if evaluate is None:
            return
        m = evaluate(net)
        for key, v in m.items():
            result.metrics.setdefault(key, []).append(np.asarray(v).tolist() if np.ndim(v) else float(v))
        if success is not None:
            hit = success.met(m[success.key])
            if first_hit is None:
                first_hit = [None] * hit.size
            for i, h in enumerate(hit):
                if h and first_hit[i] is None:
                    first_hit[i] = k

    record(0, float("nan"))
    for k in range(1, n_steps + 1):
        if fixed:
            if batch_size and batch_size < n_data:
                idx = rng.choice(n_data, size=batch_size, replace=False)
                X, y = X_all[idx], y_all[idx]
            else:
                X, y = X_all, y_all
        else:
            X, y = data(rng, batch_size)
        if reweight:
            losses = net.example_losses(net.forward(X), y)
            obj, _, grad = net.loss_and_grad(X, y, weights=losses)
        else:
            obj, _, grad = net.loss_and_grad(X, y)
        if not np.isfinite(obj) or obj > divergence:
            raise DivergenceError(k, obj, f" (lr {opt.lr}, |theta|max {np.max(np.abs(net.theta)):.3g})")
        spec = opt if lr_schedule is None else opt.replace(lr=float(lr_schedule(k)))
        try:
            opt_step(state, spec, net.theta, grad)
        except NumericFault as err:
            raise DivergenceError(k, obj, f" ({err})") from err
        if k % eval_every == 0 or k == n_steps:
            record(k, obj)
            if stop_when_done and first_hit is not None and all(t is not None for t in first_hit):
                break
    result.success_times = first_hit
    return result


def accuracy_binary(prob: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Column-wise accuracy of thresholded probabilities."""
    prob = prob.reshape(len(y), -1)
    y = np.asarray(y).reshape(prob.shape)
    return ((prob > 0.5) == (y > 0.5)).mean(axis=0)


def per_group(values: np.ndarray, groups: np.ndarray, n_groups: int) -> np.ndarray:
    """Mean of ``values`` within each group label 0..n_groups-1 (nan for empty groups)."""
    s = np.bincount(groups, weights=values, minlength=n_groups)
    c = np.bincount(groups, minlength=n_groups)
    with np.errstate(invalid="ignore", divide="ignore"):
        return s / c


def median_time(times: Sequence[Optional[int]], censor: Optional[float] = None) -> float:
    """Median of success times; misses count as ``censor`` (default +inf)."""
    fill = np.inf if censor is None else censor
    return float(np.median([fill if t is None else t for t in times]))
