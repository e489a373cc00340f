"""Task frequency distributions and task-vector geometries.

Every model in the package consumes the same two objects: a
:class:`TaskDistribution` (how often each task shows up in the data) and a
:class:`TaskVectorSet` (the direction in parameter space that represents each
task). Both are immutable once built.

Random draws go through ``numpy.random.Generator`` backed by PCG64, so a
seed pins the output on every platform numpy supports.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

DistKind = Literal["powerlaw", "exponential", "explicit"]
VectorMode = Literal["random", "orthogonalized", "onehot"]


class EmptyDistributionError(ValueError):
    pass


class InfeasibleOrthogonalizationError(ValueError):
    pass


def rng_from_seed(seed) -> np.random.Generator:
    """PCG64 generator. Accepts an int, a SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TaskDistribution:
    """Task frequencies p_1 >= p_2 >= ... > 0.

    ``ordered=False`` lifts the ordering check for explicit frequency lists
    where task numbers carry meaning of their own (dependency graphs).
    """

    p: np.ndarray
    alpha: Optional[float] = None
    kind: DistKind = "explicit"
    ordered: bool = True

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise EmptyDistributionError("task distribution needs at least one task")
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise ValueError("task frequencies must be finite and strictly positive")
        if self.ordered and np.any(np.diff(p) > 0):
            raise ValueError("task frequencies must be non-increasing")
        object.__setattr__(self, "p", _frozen(p))

    @property
    def n_task(self) -> int:
        return int(self.p.size)

    @property
    def normalized(self) -> bool:
        return abs(float(self.p.sum()) - 1.0) <= 1e-12

    def normalize(self) -> "TaskDistribution":
        return TaskDistribution(self.p / self.p.sum(), self.alpha, self.kind, self.ordered)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "alpha": self.alpha, "p": self.p.tolist()}
        if not self.ordered:
            d["ordered"] = False
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaskDistribution":
        return cls(np.asarray(d["p"], dtype=float), d.get("alpha"), d.get("kind", "explicit"),
                   bool(d.get("ordered", True)))


def make_powerlaw(n_task: int, alpha: float, normalize: bool = True) -> TaskDistribution:
    """p_i proportional to i^(-alpha), i = 1..n_task."""
    if n_task < 1:
        raise EmptyDistributionError("n_task must be >= 1")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    p = np.arange(1, n_task + 1, dtype=float) ** (-float(alpha))
    if normalize:
        p = p / p.sum()
    return TaskDistribution(p, float(alpha), "powerlaw")


def make_exponential(n_task: int, alpha: float, normalize: bool = True) -> TaskDistribution:
    """p_i proportional to exp(-alpha * i)."""
    if n_task < 1:
        raise EmptyDistributionError("n_task must be >= 1")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    i = np.arange(1, n_task + 1, dtype=float)
    # shift by the first term so large alpha does not underflow p_1
    p = np.exp(-float(alpha) * (i - 1.0))
    if normalize:
        p = p / p.sum()
    return TaskDistribution(p, float(alpha), "exponential")


def make_explicit(p, normalize: bool = False, ordered: bool = True) -> TaskDistribution:
    p = np.asarray(p, dtype=float)
    if p.size == 0:
        raise EmptyDistributionError("empty frequency list")
    if normalize:
        p = p / p.sum()
    return TaskDistribution(p, None, "explicit", ordered)


@dataclass(frozen=True)
class TaskVectorSet:
    """Unit-norm task directions, one row per task."""

    vectors: np.ndarray
    mode: VectorMode = "random"

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim != 2 or v.shape[0] == 0:
            raise ValueError("task vectors must be a non-empty 2-d array")
        norms = np.linalg.norm(v, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("task vectors must have unit norm")
        object.__setattr__(self, "vectors", _frozen(v))

    @property
    def n_task(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def n_dim(self) -> int:
        return int(self.vectors.shape[1])


def make_task_vectors(n_task: int, n_dim: int, mode: VectorMode = "random", seed=0) -> TaskVectorSet:
    """Draw task vectors.

    ``random``: rows i.i.d. from N(0, I/n_dim), then normalized.
    ``orthogonalized``: same draw, then Gram-Schmidt in task order (task 1
    keeps its direction), then normalized.
    ``onehot``: row i is the i-th canonical basis vector.
    """
    if n_task < 1 or n_dim < 1:
        raise ValueError("n_task and n_dim must be >= 1")
    if mode == "onehot":
        if n_task > n_dim:
            raise InfeasibleOrthogonalizationError(
                f"onehot vectors need n_task <= n_dim ({n_task} > {n_dim})")
        return TaskVectorSet(np.eye(n_task, n_dim), "onehot")
    if mode not in ("random", "orthogonalized"):
        raise ValueError(f"unknown task-vector mode {mode!r}")
    if mode == "orthogonalized" and n_task > n_dim:
        raise InfeasibleOrthogonalizationError(
            f"cannot orthogonalize {n_task} vectors in {n_dim} dimensions")

    rng = rng_from_seed(seed)
    raw = rng.standard_normal((n_task, n_dim)) / np.sqrt(n_dim)
    if mode == "random":
        return TaskVectorSet(raw / np.linalg.norm(raw, axis=1, keepdims=True), "random")

    out = np.empty_like(raw)
    for i in range(n_task):
        v = raw[i].copy()
        # two passes of modified Gram-Schmidt keep |t_i . t_j| near machine precision
        for _ in range(2):
            for j in range(i):
                v -= (v @ out[j]) * out[j]
        out[i] = v / np.linalg.norm(v)
    return TaskVectorSet(out, "orthogonalized")


def correlation_matrix(tv: TaskVectorSet) -> np.ndarray:
    """C_ij = t_i . t_j."""
    c = tv.vectors @ tv.vectors.T
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    return c
