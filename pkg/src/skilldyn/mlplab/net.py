"""Dense ReLU networks over one flat parameter vector, with hand-written backprop.

All weights live in ``net.theta``; the per-layer matrices are views into it,
so any optimizer from :mod:`skilldyn.optimizers` can update the whole network
with one call. Per-example losses are averaged over outputs, so a multi-output
head reports one number per example.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from ..taskdist import rng_from_seed

Head = Literal["linear_mse", "sigmoid_bce", "softmax_xent"]
HEADS = ("linear_mse", "sigmoid_bce", "softmax_xent")
_TINY = {4: 1e-30, 8: 1e-300}


@dataclass(frozen=True)
class Embedding:
    """Token embedding prepended to the dense stack.

    Inputs become integer arrays of shape (batch, n_tokens); the looked-up
    vectors are concatenated, so the first dense layer sees n_tokens * dim.
    """

    vocab: int
    dim: int
    n_tokens: int


class DenseNet:
    def __init__(self, sizes: Sequence[int], head: Head = "linear_mse", embedding: Optional[Embedding] = None,
                 seed=0, dtype=np.float64):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("sizes needs an input and an output width, all >= 1")
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        if embedding is not None and sizes[0] != embedding.n_tokens * embedding.dim:
            raise ValueError(f"input width {sizes[0]} != n_tokens * dim of the embedding")
        self.sizes = sizes
        self.head = head
        self.embedding = embedding
        self.dtype = np.dtype(dtype)

        shapes = []
        if embedding is not None:
            shapes.append((embedding.vocab, embedding.dim))
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        self.theta = np.zeros(sum(math.prod(s) for s in shapes), dtype=self.dtype)
        self._bind(shapes)
        self.init(seed)

    def _bind(self, shapes):
        views, off = [], 0
        for s in shapes:
            n = math.prod(s)
            views.append(self.theta[off:off + n].reshape(s))
            off += n
        self.E = views.pop(0) if self.embedding is not None else None
        self.W = views[0::2]
        self.b = views[1::2]

    @property
    def n_params(self) -> int:
        return self.theta.size

    def init(self, seed=0):
        """Kaiming-style uniform weights, U(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases alike; embeddings N(0, 1)."""
        rng = rng_from_seed(seed)
        if self.E is not None:
            self.E[...] = rng.standard_normal(self.E.shape)
        for W, b in zip(self.W, self.b):
            bound = 1.0 / math.sqrt(W.shape[0])
            W[...] = rng.uniform(-bound, bound, W.shape)
            b[...] = rng.uniform(-bound, bound, b.shape)
        return self

    def copy(self) -> "DenseNet":
        other = DenseNet.__new__(DenseNet)
        other.sizes, other.head, other.embedding, other.dtype = self.sizes, self.head, self.embedding, self.dtype
        other.theta = self.theta.copy()
        shapes = ([self.E.shape] if self.E is not None else []) + [a.shape for pair in zip(self.W, self.b) for a in pair]
        other._bind(shapes)
        return other

    # -- forward / backward ------------------------------------------------

    def _inputs(self, X):
        if self.E is None:
            return np.asarray(X, dtype=self.dtype)
        tok = np.asarray(X)
        if tok.ndim != 2 or tok.shape[1] != self.embedding.n_tokens:
            raise ValueError(f"embedding nets take (batch, {self.embedding.n_tokens}) token arrays")
        return self.E[tok].reshape(tok.shape[0], -1)

    def forward(self, X, cache: bool = False):
        """Pre-head outputs (linear, logits) and optionally the activations for backprop."""
        h = self._inputs(X)
        acts = [h]
        last = len(self.W) - 1
        for k, (W, b) in enumerate(zip(self.W, self.b)):
            z = h @ W + b
            h = z if k == last else np.maximum(z, 0.0)
            acts.append(h)
        return (h, acts) if cache else h

    def predict(self, X) -> np.ndarray:
        """Head output: values, probabilities, or class probabilities."""
        out = self.forward(X)
        if self.head == "sigmoid_bce":
            return 0.5 * (1.0 + np.tanh(0.5 * out))
        if self.head == "softmax_xent":
            z = out - out.max(axis=1, keepdims=True)
            e = np.exp(z)
            return e / e.sum(axis=1, keepdims=True)
        return out

    def example_losses(self, out: np.ndarray, y) -> np.ndarray:
        """Per-example loss from pre-head outputs ``out``."""
        if self.head == "linear_mse":
            y = np.asarray(y, dtype=out.dtype).reshape(out.shape)
            return ((out - y) ** 2).mean(axis=1)
        if self.head == "sigmoid_bce":
            y = np.asarray(y, dtype=out.dtype).reshape(out.shape)
            # log(1 + e^z) - y z, stable for both signs of z
            return (np.logaddexp(0.0, out) - y * out).mean(axis=1)
        y = np.asarray(y, dtype=np.int64)
        z = out - out.max(axis=1, keepdims=True)
        logz = np.log(np.exp(z).sum(axis=1))
        return logz - z[np.arange(len(y)), y]

    def _dout(self, out, y):
        """d(example loss)/d(out), row by row."""
        if self.head == "linear_mse":
            y = np.asarray(y, dtype=out.dtype).reshape(out.shape)
            return 2.0 * (out - y) / out.shape[1]
        if self.head == "sigmoid_bce":
            y = np.asarray(y, dtype=out.dtype).reshape(out.shape)
            return (0.5 * (1.0 + np.tanh(0.5 * out)) - y) / out.shape[1]
        y = np.asarray(y, dtype=np.int64)
        z = out - out.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        # subnormal probabilities make the float32 matmuls crawl and carry no signal
        p[p < _TINY[p.dtype.itemsize]] = 0.0
        p[np.arange(len(y)), y] -= 1.0
        return p

    def loss_and_grad(self, X, y, weights: Optional[np.ndarray] = None):
        """Objective (1/B) sum_i c_i l_i and its gradient w.r.t. ``theta``.

        ``weights`` are the c_i (default 1) and are treated as constants.
        Returns (objective, per-example losses, flat gradient).
        """
        out, acts = self.forward(X, cache=True)
        losses = self.example_losses(out, y)
        B = out.shape[0]
        c = np.ones(B, dtype=out.dtype) if weights is None else np.asarray(weights, dtype=out.dtype)
        obj = float(c @ losses) / B

        grad = np.zeros_like(self.theta)
        gviews = self._grad_views(grad)
        delta = self._dout(out, y) * (c / B)[:, None]
        for k in range(len(self.W) - 1, -1, -1):
            gW, gb = gviews["W"][k], gviews["b"][k]
            np.matmul(acts[k].T, delta, out=gW)
            gb[...] = delta.sum(axis=0)
            if k > 0 or self.E is not None:
                delta = delta @ self.W[k].T
                if k > 0:
                    delta *= acts[k] > 0
        if self.E is not None:
            tok = np.asarray(X)
            d = delta.reshape(B, self.embedding.n_tokens, self.embedding.dim)
            np.add.at(gviews["E"], tok, d)
        return obj, losses, grad

    def _grad_views(self, flat):
        views, off = {"W": [], "b": []}, 0
        if self.E is not None:
            n = self.E.size
            views["E"] = flat[:n].reshape(self.E.shape)
            off = n
        for W, b in zip(self.W, self.b):
            views["W"].append(flat[off:off + W.size].reshape(W.shape))
            off += W.size
            views["b"].append(flat[off:off + b.size])
            off += b.size
        return views

    def loss(self, X, y, weights: Optional[np.ndarray] = None) -> float:
        losses = self.example_losses(self.forward(X), y)
        c = 1.0 if weights is None else np.asarray(weights)
        return float(np.mean(c * losses))


def param_count(sizes: Sequence[int], embedding: Optional[Embedding] = None) -> int:
    n = sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))
    if embedding is not None:
        n += embedding.vocab * embedding.dim
    return n


def numeric_grad(net: DenseNet, X, y, h: float = 1e-5, weights=None) -> np.ndarray:
    """Central finite differences of ``net.loss`` over every parameter."""
    g = np.zeros_like(net.theta)
    for j in range(net.theta.size):
        old = net.theta[j]
        net.theta[j] = old + h
        up = net.loss(X, y, weights)
        net.theta[j] = old - h
        dn = net.loss(X, y, weights)
        net.theta[j] = old
        g[j] = (up - dn) / (2 * h)
    return g
