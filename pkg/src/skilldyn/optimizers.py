"""Stateful first-order optimizers over flat parameter vectors.

All five algorithms share one entry point, :func:`step`, which updates the
parameter array in place. Weight decay is decoupled everywhere
(``theta -= lr * weight_decay * theta``) and learning-rate schedules are left
to the caller.

Update rules, with g the gradient and t the 1-based step count:

* sgd:      theta -= lr * g
* signgd:   theta -= lr * sign(g), sign(0) = 0
* adam:     bias-corrected first/second moments
* ademamix: (m1_hat + mix_alpha * m2) / (sqrt(v_hat) + eps), where m2 is a
            slow EMA with beta3 (no bias correction, as in Pagliardini et al.)
* lion:     theta -= lr * sign(beta1 * m + (1 - beta1) * g), then
            m = beta2 * m + (1 - beta2) * g  (Chen et al.)
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Literal, Optional

import numpy as np

Algo = Literal["sgd", "signgd", "adam", "ademamix", "lion"]
ALGOS = ("sgd", "signgd", "adam", "ademamix", "lion")

_DEFAULT_BETAS = {
    "sgd": (0.0, 0.0),
    "signgd": (0.0, 0.0),
    "adam": (0.9, 0.999),
    "ademamix": (0.9, 0.999),
    "lion": (0.9, 0.99),
}


class NumericFault(FloatingPointError):
    """Non-finite gradient entry."""

    def __init__(self, message: str, index: Optional[int] = None, step: Optional[int] = None):
        super().__init__(message)
        self.index = index
        self.step = step


@dataclass(frozen=True)
class OptimizerSpec:
    algo: Algo = "adam"
    lr: float = 1e-3
    beta1: Optional[float] = None
    beta2: Optional[float] = None
    beta3: float = 0.9999
    mix_alpha: float = 5.0
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"unknown optimizer {self.algo!r}; choose from {ALGOS}")
        b1, b2 = _DEFAULT_BETAS[self.algo]
        if self.beta1 is None:
            object.__setattr__(self, "beta1", b1)
        if self.beta2 is None:
            object.__setattr__(self, "beta2", b2)
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        for name in ("beta1", "beta2", "beta3"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {b}")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        if self.weight_decay < 0 or self.mix_alpha < 0:
            raise ValueError("weight_decay and mix_alpha must be >= 0")

    def replace(self, **kw) -> "OptimizerSpec":
        d = asdict(self)
        d.update(kw)
        return OptimizerSpec(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimizerState:
    step_count: int = 0
    m1: Optional[np.ndarray] = field(default=None, repr=False)
    m2: Optional[np.ndarray] = field(default=None, repr=False)
    v: Optional[np.ndarray] = field(default=None, repr=False)


def _check_finite(grad: np.ndarray, step_no: int):
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise NumericFault(f"non-finite gradient at index {bad} (step {step_no})", bad, step_no)


def step(state: OptimizerState, spec: OptimizerSpec, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Apply one update to ``params`` in place and return it."""
    if params.shape != grad.shape:
        raise ValueError(f"params {params.shape} and grad {grad.shape} differ in shape")
    _check_finite(grad, state.step_count + 1)
    state.step_count += 1
    t = state.step_count
    lr = spec.lr
    algo = spec.algo

    if spec.weight_decay > 0:
        params -= lr * spec.weight_decay * params

    if algo == "sgd":
        params -= lr * grad
    elif algo == "signgd":
        params -= lr * np.sign(grad)
    elif algo == "adam" or algo == "ademamix":
        if state.m1 is None:
            state.m1 = np.zeros_like(params)
            state.v = np.zeros_like(params)
        b1, b2 = spec.beta1, spec.beta2
        state.m1 *= b1
        state.m1 += (1.0 - b1) * grad
        state.v *= b2
        state.v += (1.0 - b2) * grad * grad
        m_hat = state.m1 / (1.0 - b1 ** t)
        denom = np.sqrt(state.v / (1.0 - b2 ** t)) + spec.eps
        if algo == "adam":
            params -= lr * m_hat / denom
        else:
            if state.m2 is None:
                state.m2 = np.zeros_like(params)
            state.m2 *= spec.beta3
            state.m2 += (1.0 - spec.beta3) * grad
            params -= lr * (m_hat + spec.mix_alpha * state.m2) / denom
    elif algo == "lion":
        if state.m1 is None:
            state.m1 = np.zeros_like(params)
        b1, b2 = spec.beta1, spec.beta2
        params -= lr * np.sign(b1 * state.m1 + (1.0 - b1) * grad)
        state.m1 *= b2
        state.m1 += (1.0 - b2) * grad
    else:  # pragma: no cover - guarded by OptimizerSpec
        raise ValueError(algo)
    return params


class Optimizer:
    """Convenience pairing of a spec with its state."""

    def __init__(self, spec: OptimizerSpec):
        self.spec = spec
        self.state = OptimizerState()

    def step(self, params: np.ndarray, grad: np.ndarray, lr: Optional[float] = None) -> np.ndarray:
        spec = self.spec if lr is None or lr == self.spec.lr else self.spec.replace(lr=lr)
        return step(self.state, spec, params, grad)
