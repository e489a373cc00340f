"""The Geometry model: skills as linear projections of the parameter vector.

Each task i owns a unit direction t_i in parameter space; its skill level is
s_i = (theta - theta0) . t_i and the training loss is sum_i p_i L(s_i) with
L(s) = (1 - s)^2 (``mse``) or -log sigmoid(s) (``xent``). Finite batches
replace p by the empirical task frequencies of a multinomial draw, and
optional isotropic Gaussian noise is added to the aggregated gradient.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from .optimizers import NumericFault, OptimizerSpec, OptimizerState, step as opt_step
from .taskdist import TaskDistribution, TaskVectorSet, make_powerlaw, make_task_vectors, rng_from_seed
from .trajectory import Trajectory

LossKind = Literal["mse", "xent"]


def task_loss(s: np.ndarray, kind: LossKind) -> np.ndarray:
    if kind == "mse":
        return (1.0 - s) ** 2
    if kind == "xent":
        return np.logaddexp(0.0, -s)
    raise ValueError(f"unknown loss kind {kind!r}")


def task_loss_grad(s: np.ndarray, kind: LossKind) -> np.ndarray:
    """dL/ds."""
    if kind == "mse":
        return -2.0 * (1.0 - s)
    if kind == "xent":
        # -e^{-s}/(1+e^{-s}) = -sigmoid(-s), written to avoid overflow
        return -0.5 * (1.0 - np.tanh(0.5 * s))
    raise ValueError(f"unknown loss kind {kind!r}")


@dataclass
class GeometrySystem:
    tv: TaskVectorSet
    dist: TaskDistribution
    loss_kind: LossKind = "mse"
    noise_sigma: float = 0.0
    batch_size: int = 0
    theta0: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.tv.n_task != self.dist.n_task:
            raise ValueError(f"{self.tv.n_task} task vectors but {self.dist.n_task} frequencies")
        if self.loss_kind not in ("mse", "xent"):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.noise_sigma < 0 or self.batch_size < 0:
            raise ValueError("noise_sigma and batch_size must be >= 0")
        if self.theta0 is None:
            self.theta0 = np.zeros(self.tv.n_dim)
        self.theta0 = np.array(self.theta0, dtype=float)
        self.theta = self.theta0.copy() if self.theta is None else np.array(self.theta, dtype=float)
        self._s0 = self.tv.vectors @ self.theta0

    @property
    def n_dim(self) -> int:
        return self.tv.n_dim

    @property
    def n_task(self) -> int:
        return self.tv.n_task

    def skill_levels(self) -> np.ndarray:
        return self.tv.vectors @ self.theta - self._s0

    def total_loss(self) -> float:
        return float(self.dist.p @ task_loss(self.skill_levels(), self.loss_kind))

    def loss_at(self, theta: np.ndarray) -> float:
        s = self.tv.vectors @ (theta - self.theta0)
        return float(self.dist.p @ task_loss(s, self.loss_kind))

    def task_weights(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Per-task gradient coefficients w_i, so that grad = sum_i w_i t_i."""
        p = self.dist.p
        if self.batch_size > 0:
            if rng is None:
                raise ValueError("finite batches need a random generator")
            # empirical frequencies rescaled so their expectation is p
            total = p.sum()
            p = rng.multinomial(self.batch_size, p / total) * (total / self.batch_size)
        return p * task_loss_grad(self.skill_levels(), self.loss_kind)


def skill_levels(sys: GeometrySystem) -> np.ndarray:
    return sys.skill_levels()


def batch_gradient(sys: GeometrySystem, seed=0) -> np.ndarray:
    """Gradient of the (empirical-frequency) loss, plus optional noise."""
    rng = rng_from_seed(seed)
    grad = sys.tv.vectors.T @ sys.task_weights(rng)
    if sys.noise_sigma > 0:
        grad += sys.noise_sigma * rng.standard_normal(grad.shape)
    return grad


def n_align(grad_total: np.ndarray, grad_task: np.ndarray) -> int:
    """Signed count of coordinates whose gradient signs agree."""
    grad_total = np.asarray(grad_total)
    grad_task = np.asarray(grad_task)
    if grad_total.shape != grad_task.shape:
        raise ValueError("gradients differ in length")
    return int(np.sign(grad_task).astype(np.int64) @ np.sign(grad_total).astype(np.int64))


def run(sys: GeometrySystem, opt: OptimizerSpec, n_steps: int, record_every: int = 1,
        record_align: bool = False, seed=0, meta: Optional[dict] = None,
        stop_below: Optional[float] = None) -> Trajectory:
    """Train the system in place and return the recorded trajectory.

    Step 0 (the initial state) and the final step are always recorded.
    ``n_align`` for task i is computed from the task gradient w_i t_i and the
    total (noisy) gradient actually handed to the optimizer. With
    ``stop_below`` the run ends at the first record where every task loss is
    below that value.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    record_every = max(1, int(record_every))
    rng = rng_from_seed(seed)
    state = OptimizerState()
    T = sys.tv.vectors
    sign_T = np.sign(T).astype(np.int8) if record_align else None
    p = sys.dist.p

    rec_steps = [0]
    rec_s = [sys.skill_levels()]
    rec_align = [np.zeros(sys.n_task, dtype=np.int64)] if record_align else None

    for k in range(1, n_steps + 1):
        w = sys.task_weights(rng)
        grad = T.T @ w
        if sys.noise_sigma > 0:
            grad += sys.noise_sigma * rng.standard_normal(grad.shape)
        try:
            opt_step(state, opt, sys.theta, grad)
        except NumericFault as err:
            raise NumericFault(f"geometry run: {err} at step {k}", err.index, k) from err
        if k % record_every == 0 or k == n_steps:
            rec_steps.append(k)
            rec_s.append(sys.skill_levels())
            if record_align:
                counts = sign_T @ np.sign(grad).astype(np.int8).astype(np.int64)
                rec_align.append(np.sign(w).astype(np.int64) * counts)
            if stop_below is not None and np.all(task_loss(rec_s[-1], sys.loss_kind) < stop_below):
                break

    skills = np.array(rec_s)
    losses = task_loss(skills, sys.loss_kind)
    info = {
        "model": "geometry", "n_task": sys.n_task, "n_dim": sys.n_dim, "loss_kind": sys.loss_kind,
        "noise_sigma": sys.noise_sigma, "batch_size": sys.batch_size, "optimizer": opt.to_dict(),
        "n_steps": rec_steps[-1], "seed": seed if isinstance(seed, int) else None, "p": p.tolist(),
    }
    if meta:
        info.update(meta)
    return Trajectory(np.array(rec_steps), skills, losses, losses @ p,
                      None if rec_align is None else np.array(rec_align), info)


def build_system(n_task: int, n_dim: int, alpha: float = 1.0, *, mode: str = "orthogonalized",
                 loss_kind: LossKind = "mse", batch_size: int = 0, noise_sigma: float = 0.0,
                 dist: Optional[TaskDistribution] = None, seed: int = 0) -> GeometrySystem:
    """Power-law system with vectors drawn from ``seed``."""
    dist = dist if dist is not None else make_powerlaw(n_task, alpha)
    tv = make_task_vectors(n_task, n_dim, mode, seed)
    return GeometrySystem(tv, dist, loss_kind, noise_sigma, batch_size)


@dataclass
class DimSweep:
    n_dims: Sequence[int]
    n_task: int = 1000
    alpha: float = 1.0
    opt: OptimizerSpec = field(default_factory=lambda: OptimizerSpec("signgd", lr=0.01))
    n_steps: int = 100_000
    batch_size: int = 128
    loss_kind: LossKind = "mse"
    noise_sigma: float = 0.0
    mode: str = "random"
    tail: float = 0.1          # fraction of the run averaged into the final loss
    record_every: int = 100
    seed: int = 0


def _sweep_cell(args):
    sweep, n_dim = args
    mode = sweep.mode
    if mode == "orthogonalized" and n_dim < sweep.n_task:
        mode = "random"
    sys = build_system(sweep.n_task, n_dim, sweep.alpha, mode=mode, loss_kind=sweep.loss_kind,
                       batch_size=sweep.batch_size, noise_sigma=sweep.noise_sigma, seed=sweep.seed + n_dim)
    traj = run(sys, sweep.opt, sweep.n_steps, sweep.record_every, seed=sweep.seed + 7919 * n_dim)
    k = max(1, int(round(sweep.tail * (len(traj) - 1))))
    return n_dim, float(np.mean(traj.total_loss[-k:])), traj


def loss_vs_dim_sweep(sweep: DimSweep, workers: Optional[int] = None, return_trajectories: bool = False):
    """Final loss for each n_dim, in the order given.

    The final loss is the mean total loss over the last ``tail`` fraction of
    recorded points (``tail=0`` gives the single final record).
    """
    cells = [(sweep, int(d)) for d in sweep.n_dims]
    workers = workers or os.cpu_count() or 1
    if workers == 1 or len(cells) == 1:
        results = [_sweep_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as ex:
            results = list(ex.map(_sweep_cell, cells))
    table = [(d, loss) for d, loss, _ in results]
    if return_trajectories:
        return table, [t for _, _, t in results]
    return table


def two_task_times(p1: float, opt: OptimizerSpec, n_dim: int = 1000, batch_size: int = 128,
                   n_steps: int = 50_000, loss_below: float = 0.01, record_every: int = 1, seed: int = 0):
    """Convergence steps (t1, t2) of a two-task system with p = (p1, 1 - p1).

    Task vectors are orthogonalized; a task has converged once its loss is
    below ``loss_below``. Missing crossings come back as None.
    """
    dist = TaskDistribution(np.array([p1, 1.0 - p1]), None, "explicit")
    sys = GeometrySystem(make_task_vectors(2, n_dim, "orthogonalized", seed), dist, "mse", 0.0, batch_size)
    traj = run(sys, opt, n_steps, record_every, seed=seed + 1, stop_below=loss_below)
    return (traj.first_crossing(0, loss_below=loss_below), traj.first_crossing(1, loss_below=loss_below), traj)


@dataclass
class StepScaling:
    """Loss-vs-steps run for extracting alpha_S.

    Full batch keeps the late-time loss free of sampling noise, and a small lr
    keeps SignGD's jitter floor below the tail tasks for longer. The fit
    window runs from the first task's learning time t_unit to 10 t_unit.
    """

    alpha: float = 2.0
    n_task: int = 1000
    n_dim: int = 1000
    lr: float = 1e-4
    n_steps: int = 12_000
    batch_size: int = 0
    record_every: int = 10
    unit_loss: float = 0.01
    window_decades: float = 1.0
    seed: int = 0


def step_scaling_run(cfg: StepScaling):
    """Returns (trajectory, fit window)."""
    sys = build_system(cfg.n_task, cfg.n_dim, cfg.alpha, mode="orthogonalized",
                       batch_size=cfg.batch_size, seed=cfg.seed)
    traj = run(sys, OptimizerSpec("signgd", lr=cfg.lr), cfg.n_steps, cfg.record_every,
               seed=cfg.seed + 1, meta={"alpha": cfg.alpha})
    t_unit = traj.first_crossing(0, loss_below=cfg.unit_loss)
    if t_unit is None:
        raise RuntimeError("the most frequent task never converged; raise n_steps")
    return traj, (float(t_unit), float(t_unit) * 10 ** cfg.window_decades)
