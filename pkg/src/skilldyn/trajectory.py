"""Time-indexed skill/loss records shared by the geometry, resource and domino models."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np


@dataclass
class Trajectory:
    steps: np.ndarray
    skills: np.ndarray
    task_losses: np.ndarray
    total_loss: np.ndarray
    n_align: Optional[np.ndarray] = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.steps = np.asarray(self.steps)
        self.skills = np.atleast_2d(np.asarray(self.skills, dtype=float))
        self.task_losses = np.atleast_2d(np.asarray(self.task_losses, dtype=float))
        self.total_loss = np.asarray(self.total_loss, dtype=float)
        n = len(self.steps)
        if self.skills.shape[0] != n or self.task_losses.shape != self.skills.shape or self.total_loss.shape != (n,):
            raise ValueError("trajectory arrays disagree in length")
        if n > 1 and np.any(np.diff(self.steps) <= 0):
            raise ValueError("trajectory steps must be strictly increasing")
        if self.n_align is not None:
            self.n_align = np.asarray(self.n_align)

    @property
    def n_task(self) -> int:
        return self.skills.shape[1]

    def __len__(self) -> int:
        return len(self.steps)

    def unskill(self) -> np.ndarray:
        return 1.0 - self.skills

    def first_crossing(self, task: int, *, skill_above: Optional[float] = None,
                       loss_below: Optional[float] = None) -> Optional[float]:
        """First recorded step where task ``task`` (0-based) crosses a threshold."""
        if (skill_above is None) == (loss_below is None):
            raise ValueError("give exactly one of skill_above / loss_below")
        if skill_above is not None:
            hit = self.skills[:, task] > skill_above
        else:
            hit = self.task_losses[:, task] < loss_below
        idx = np.flatnonzero(hit)
        return None if idx.size == 0 else self.steps[idx[0]].item()

    def columns(self) -> list[str]:
        n = self.n_task
        cols = ["step"] + [f"s_{i + 1}" for i in range(n)] + [f"loss_{i + 1}" for i in range(n)] + ["total_loss"]
        if self.n_align is not None:
            cols += [f"align_{i + 1}" for i in range(n)]
        return cols

    def rows(self):
        for k in range(len(self)):
            row = [self.steps[k].item(), *self.skills[k].tolist(), *self.task_losses[k].tolist(),
                   float(self.total_loss[k])]
            if self.n_align is not None:
                row += self.n_align[k].tolist()
            yield row

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for row in self.rows():
                w.writerow([repr(x) if isinstance(x, float) else x for x in row])
        return path

    def to_json(self, path) -> Path:
        path = Path(path)
        payload = {
            "meta": self.meta,
            "steps": self.steps.tolist(),
            "skills": self.skills.tolist(),
            "task_losses": self.task_losses.tolist(),
            "total_loss": self.total_loss.tolist(),
            "n_align": None if self.n_align is None else self.n_align.tolist(),
        }
        path.write_text(json.dumps(payload, default=_json_default))
        return path

    @classmethod
    def from_json(cls, path) -> "Trajectory":
        d = json.loads(Path(path).read_text())
        return cls(np.asarray(d["steps"]), d["skills"], d["task_losses"], d["total_loss"],
                   None if d.get("n_align") is None else np.asarray(d["n_align"]), d.get("meta", {}))

    @classmethod
    def from_csv(cls, path, meta: Optional[dict] = None) -> "Trajectory":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            data = np.array([[float(x) for x in row] for row in r], dtype=float)
        n = sum(1 for c in header if c.startswith("s_"))
        steps = data[:, 0]
        if np.all(steps == np.round(steps)):
            steps = steps.astype(np.int64)
        align = None
        if any(c.startswith("align_") for c in header):
            align = data[:, 2 + 2 * n:]
        return cls(steps, data[:, 1:1 + n], data[:, 1 + n:1 + 2 * n], data[:, 1 + 2 * n], align, meta or {})


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")
