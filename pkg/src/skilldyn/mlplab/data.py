"""Dataset generators for the MLP experiments. All are deterministic given a seed."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..taskdist import TaskDistribution, make_powerlaw, rng_from_seed


@dataclass(frozen=True)
class SparseParityTask:
    """n_tasks control bits followed by n payload bits; subtask i is the parity of payload bits S_i."""

    n_tasks: int
    n: int
    k: int
    subsets: tuple
    dist: TaskDistribution

    def __post_init__(self):
        if self.n_tasks < 1 or self.n < 1 or not 1 <= self.k <= self.n:
            raise ValueError("need n_tasks >= 1 and 1 <= k <= n")
        if len(self.subsets) != self.n_tasks or self.dist.n_task != self.n_tasks:
            raise ValueError("one subset and one frequency per subtask")
        subs = []
        for s in self.subsets:
            s = tuple(int(j) for j in s)
            if len(s) != self.k or len(set(s)) != self.k or min(s) < 0 or max(s) >= self.n:
                raise ValueError(f"subset {s} is not {self.k} distinct payload indices")
            subs.append(s)
        object.__setattr__(self, "subsets", tuple(subs))

    @property
    def n_inputs(self) -> int:
        return self.n_tasks + self.n


def make_sparse_parity_task(n_tasks: int, n: int, k: int, alpha: float = 0.0, seed=0) -> SparseParityTask:
    """Random subsets (each drawn without replacement) and p_i proportional to i^-alpha."""
    rng = rng_from_seed(seed)
    subsets = tuple(tuple(sorted(rng.choice(n, size=k, replace=False).tolist())) for _ in range(n_tasks))
    return SparseParityTask(n_tasks, n, k, subsets, make_powerlaw(n_tasks, alpha))


def parity_labels(payload: np.ndarray, subsets, control: np.ndarray) -> np.ndarray:
    idx = np.asarray(subsets)[control]                       # (N, k)
    bits = np.take_along_axis(payload, idx, axis=1)
    return bits.sum(axis=1) % 2


def gen_multitask_parity(task: SparseParityTask, n_samples: int, seed=0, dtype=np.float64):
    """Returns (X, y, control): X is (n_samples, n_tasks + n), y in {0, 1}."""
    rng = rng_from_seed(seed)
    p = task.dist.p / task.dist.p.sum()
    control = rng.choice(task.n_tasks, size=n_samples, p=p)
    payload = rng.integers(0, 2, size=(n_samples, task.n), dtype=np.int8)
    y = parity_labels(payload, task.subsets, control)
    X = np.zeros((n_samples, task.n_inputs), dtype=dtype)
    X[np.arange(n_samples), control] = 1.0
    X[:, task.n_tasks:] = payload
    return X, y.astype(dtype), control


def stratified_parity_eval(task: SparseParityTask, per_task: int, seed=0, dtype=np.float64):
    """Equal-sized evaluation set for every subtask, for per-subtask metrics."""
    rng = rng_from_seed(seed)
    control = np.repeat(np.arange(task.n_tasks), per_task)
    payload = rng.integers(0, 2, size=(control.size, task.n), dtype=np.int8)
    y = parity_labels(payload, task.subsets, control)
    X = np.zeros((control.size, task.n_inputs), dtype=dtype)
    X[np.arange(control.size), control] = 1.0
    X[:, task.n_tasks:] = payload
    return X, y.astype(dtype), control


# compositional parity: y1 = x1^x2, y2 = x3^x4, y3 = x1^x2^x3^x4 (or x5^..^x8 in the ablation)
COMPOSITIONAL_SUBSETS = ((0, 1), (2, 3), (0, 1, 2, 3))
ABLATION_SUBSETS = ((0, 1), (2, 3), (4, 5, 6, 7))


def gen_compositional_parity(n_samples: int, n: int = 32, ablation: bool = False, seed=0, dtype=np.float64):
    """Uniform bit strings of length n with three parity targets, shape (n_samples, 3)."""
    rng = rng_from_seed(seed)
    X = rng.integers(0, 2, size=(n_samples, n), dtype=np.int8)
    subsets = ABLATION_SUBSETS if ablation else COMPOSITIONAL_SUBSETS
    Y = np.stack([X[:, list(s)].sum(axis=1) % 2 for s in subsets], axis=1)
    return X.astype(dtype), Y.astype(dtype)


def modular_addition_split(p: int = 59, train_frac: float = 0.8, seed=0):
    """All p^2 pairs (a, b) -> (a + b) mod p, shuffled and split.

    Returns (train_tokens, train_labels, test_tokens, test_labels).
    """
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must lie in (0, 1)")
    a, b = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")
    tokens = np.stack([a.ravel(), b.ravel()], axis=1)
    labels = (tokens[:, 0] + tokens[:, 1]) % p
    perm = rng_from_seed(seed).permutation(len(tokens))
    n_train = int(round(train_frac * len(tokens)))
    tr, te = perm[:n_train], perm[n_train:]
    return tokens[tr], labels[tr], tokens[te], labels[te]


def gen_sparse_squares(n_points: int = 1000, y_zero_prob: float = 0.99, seed=0, dtype=np.float64):
    """(x, y) -> (x^2, y^2) with x ~ U[-1, 1] and y zero with probability ``y_zero_prob``."""
    rng = rng_from_seed(seed)
    x = rng.uniform(-1.0, 1.0, n_points)
    y = rng.uniform(-1.0, 1.0, n_points)
    y[rng.random(n_points) < y_zero_prob] = 0.0
    X = np.stack([x, y], axis=1).astype(dtype)
    return X, (X ** 2).astype(dtype)
