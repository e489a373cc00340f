"""Hierarchical quadratic loss in rotated coordinates.

loss(theta) = sum_i w_i x_i^2 with x = R theta. SGD does not care about R;
SignGD acts coordinate-wise on theta, so a rotation mixes the components
and turns their simultaneous decay into a sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .optimizers import NumericFault, OptimizerSpec, OptimizerState, step as opt_step
from .trajectory import Trajectory

DEFAULT_WEIGHTS = (1.0, 0.1, 0.01, 0.001)
DEFAULT_LR = {"sgd": 0.05, "signgd": 1e-3}
DEFAULT_STEPS = 5000


def hadamard4() -> np.ndarray:
    """4x4 Hadamard matrix scaled by 1/2, so it is orthogonal."""
    return 0.5 * np.array([[1.0, 1.0, 1.0, 1.0],
                           [1.0, 1.0, -1.0, -1.0],
                           [1.0, -1.0, 1.0, -1.0],
                           [1.0, -1.0, -1.0, 1.0]])


@dataclass
class QuadraticLoss:
    weights: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_WEIGHTS))
    rotation: Optional[np.ndarray] = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0 or np.any(w <= 0) or np.any(np.diff(w) > 0):
            raise ValueError("weights must be strictly positive and non-increasing")
        self.weights = w
        R = np.eye(w.size) if self.rotation is None else np.asarray(self.rotation, dtype=float)
        if R.shape != (w.size, w.size):
            raise ValueError(f"rotation must be {w.size}x{w.size}")
        if np.max(np.abs(R.T @ R - np.eye(w.size))) > 1e-12:
            raise ValueError("rotation must be orthogonal")
        self.rotation = R

    @property
    def dim(self) -> int:
        return self.weights.size

    def coords(self, theta: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(theta, dtype=float)

    def eval(self, theta: np.ndarray):
        """(total, per_component) at ``theta``."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta must have length {self.dim}")
        per = self.weights * self.coords(theta) ** 2
        return float(per.sum()), per

    def grad(self, theta: np.ndarray) -> np.ndarray:
        x = self.coords(theta)
        return self.rotation.T @ (2.0 * self.weights * x)

    def theta_for(self, x: np.ndarray) -> np.ndarray:
        """Parameters whose rotated coordinates equal ``x``."""
        return self.rotation.T @ np.asarray(x, dtype=float)


def run_quadratic(q: QuadraticLoss, opt: OptimizerSpec, theta0=None, n_steps: int = DEFAULT_STEPS,
                  meta: Optional[dict] = None) -> Trajectory:
    """Full-gradient descent; per-component losses recorded at every step.

    ``theta0`` defaults to the point with x = (1, ..., 1).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    theta = q.theta_for(np.ones(q.dim)) if theta0 is None else np.array(theta0, dtype=float)
    if theta.shape != (q.dim,):
        raise ValueError(f"theta0 must have length {q.dim}")
    state = OptimizerState()
    xs = np.empty((n_steps + 1, q.dim))
    xs[0] = q.coords(theta)
    for k in range(1, n_steps + 1):
        try:
            opt_step(state, opt, theta, q.grad(theta))
        except NumericFault as err:
            raise NumericFault(f"quadratic run: {err} at step {k}", err.index, k) from err
        xs[k] = q.coords(theta)
    per = q.weights * xs ** 2
    info = {"model": "quadratic", "weights": q.weights.tolist(), "rotation": q.rotation.tolist(),
            "optimizer": opt.to_dict(), "n_steps": n_steps}
    if meta:
        info.update(meta)
    return Trajectory(np.arange(n_steps + 1), xs, per, per.sum(axis=1), None, info)


def sequential_threshold(traj: Trajectory, hold: float = 0.05, release: float = 0.1) -> list:
    """Check the domino ordering of components.

    For each i, component i+1 must stay within ``hold`` (relative) of its
    initial loss until component i's loss is below ``release`` times its own
    initial value. Returns one bool per consecutive pair.
    """
    L = traj.task_losses
    out = []
    for i in range(L.shape[1] - 1):
        below = np.flatnonzero(L[:, i] < release * L[0, i])
        if below.size == 0:
            out.append(False)
            continue
        k = below[0]
        ref = L[0, i + 1]
        out.append(bool(np.all(np.abs(L[:k, i + 1] - ref) <= hold * ref)))
    return out
