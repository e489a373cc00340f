"""Closed-form Domino model.

Skills are learned strictly one after another, each taking t0: skill i
(1-based) ramps linearly from 0 to 1 on ((i - 1) t0, i t0]. Tasks beyond
``n_learnable`` never get learned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .taskdist import TaskDistribution
from .trajectory import Trajectory


@dataclass(frozen=True)
class DominoConfig:
    n_task: int
    t0: float = 1.0
    n_learnable: Optional[int] = None

    def __post_init__(self):
        if self.n_task < 1:
            raise ValueError("n_task must be >= 1")
        if not self.t0 > 0:
            raise ValueError("t0 must be > 0")
        if self.n_learnable is None:
            object.__setattr__(self, "n_learnable", self.n_task)
        if not 0 <= self.n_learnable <= self.n_task:
            raise ValueError(f"n_learnable must lie in [0, {self.n_task}], got {self.n_learnable}")


def skill_curve(cfg: DominoConfig, i, t):
    """Skill of task ``i`` (1-based) at time ``t``; broadcasts over arrays."""
    i_arr = np.asarray(i)
    if np.any(i_arr < 1) or np.any(i_arr > cfg.n_task):
        raise ValueError(f"task index must lie in [1, {cfg.n_task}]")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be >= 0")
    s = np.clip(t_arr / cfg.t0 - (i_arr - 1), 0.0, 1.0)
    s = np.where(i_arr > cfg.n_learnable, 0.0, s)
    return float(s) if np.ndim(s) == 0 else s


def skill_matrix(cfg: DominoConfig, t) -> np.ndarray:
    """All skills on a time grid, shape (len(t), n_task)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    idx = np.arange(1, cfg.n_task + 1)
    return skill_curve(cfg, idx[None, :], t[:, None])


def total_time(cfg: DominoConfig) -> float:
    return cfg.n_learnable * cfg.t0


def _loss_fn(kind: str):
    if kind == "mse":
        return lambda s: (1.0 - s) ** 2
    if kind == "xent":
        # -log sigmoid evaluated at the skill level
        return lambda s: np.logaddexp(0.0, -s)
    raise ValueError(f"unknown loss kind {kind!r}")


def loss_curve(cfg: DominoConfig, dist: TaskDistribution, t, loss_kind: str = "mse",
               loss_at_unlearned: Optional[float] = None) -> np.ndarray:
    """Total loss sum_i p_i L(s_i(t)) on the grid ``t``.

    ``loss_at_unlearned`` overrides L for tasks that are never learned
    (default L(0)).
    """
    if dist.n_task != cfg.n_task:
        raise ValueError("distribution and config disagree on n_task")
    L = _loss_fn(loss_kind)
    per_task = L(skill_matrix(cfg, t))
    if loss_at_unlearned is not None and cfg.n_learnable < cfg.n_task:
        per_task[:, cfg.n_learnable:] = loss_at_unlearned
    return per_task @ dist.p


def trajectory(cfg: DominoConfig, dist: TaskDistribution, t, loss_kind: str = "mse") -> Trajectory:
    t = np.asarray(t, dtype=float)
    skills = skill_matrix(cfg, t)
    losses = _loss_fn(loss_kind)(skills)
    meta = {"model": "domino", "n_task": cfg.n_task, "t0": cfg.t0, "n_learnable": cfg.n_learnable,
            "loss_kind": loss_kind, "p": dist.p.tolist()}
    return Trajectory(t, skills, losses, losses @ dist.p, None, meta)


@dataclass(frozen=True)
class ExponentPrediction:
    quanta: tuple
    domino: tuple
    degenerate: bool = False


def scaling_exponents(alpha: float) -> ExponentPrediction:
    """Predicted (alpha_N, alpha_S) for the Quanta and Domino pictures.

    For alpha <= 1 both pictures predict no scaling at all; the result is
    zeros with ``degenerate`` set.
    """
    if alpha <= 1:
        return ExponentPrediction((0.0, 0.0), (0.0, 0.0), True)
    a_n = alpha - 1.0
    return ExponentPrediction((a_n, a_n / alpha), (a_n, a_n))


@dataclass(frozen=True)
class ModularTiming:
    T_nonmodular: float
    T_modular: float
    ratio: float


def modular_speedup(n_task: int, n_dim: int) -> ModularTiming:
    """Learning time with all tasks sharing n_dim vs one block of n_dim/n_task each.

    A single task in d dimensions takes t0 ~ 1/sqrt(d). Shared: n_task tasks in
    sequence, T_N = n_task / sqrt(n_dim). Modular: all in parallel, each in
    n_dim/n_task dimensions, T_M = sqrt(n_task / n_dim). The ratio is taken
    after cancelling the common factor, so it is sqrt(n_task) to the last bit.
    """
    if n_task < 1 or n_dim < 1:
        raise ValueError("n_task and n_dim must be >= 1")
    root = math.sqrt(n_dim)
    t_n = n_task / root
    t_m = math.sqrt(n_task) / root
    return ModularTiming(t_n, t_m, math.sqrt(n_task))
