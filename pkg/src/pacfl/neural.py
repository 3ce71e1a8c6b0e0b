"""Small fully connected networks with hand-written reverse-mode gradients.

Hidden layers use ReLU and the output layer is linear.  Inputs are batched
row-wise: a ``(batch, in)`` array maps to ``(batch, out)``; a 1-D input is
treated as a batch of one and returned 1-D.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np


class Mlp:
    """Feed-forward network ``sizes[0] -> ... -> sizes[-1]``.

    Weights are stored as ``(fan_in, fan_out)`` matrices so the forward pass
    is ``x @ W + b``.
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | None = None):
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise ValueError(f"invalid layer sizes {sizes!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))
        self._cache: list[np.ndarray] | None = None

    @property
    def params(self) -> list[np.ndarray]:
        """Parameter arrays in the fixed order ``W0, b0, W1, b1, ...``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @property
    def num_params(self) -> int:
        return sum((i + 1) * o for i, o in zip(self.sizes[:-1], self.sizes[1:]))

    def _as_batch(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input width {self.sizes[0]}, got shape {x.shape}")
        return x, single

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Forward pass that caches activations for :meth:`backward`."""
        h, single = self._as_batch(x)
        cache = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            cache.append(h)
        self._cache = cache
        return h[0] if single else h

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Forward pass without touching the gradient cache."""
        h, single = self._as_batch(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h[0] if single else h

    def backward(self, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of ``sum(grad_out * output)`` w.r.t. params and input.

        Returns parameter gradients in :attr:`params` order and the input
        gradient with the same shape as the cached input batch.
        """
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        cache = self._cache
        g = np.asarray(grad_out, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        if g.shape != cache[-1].shape:
            raise ValueError(f"upstream gradient shape {g.shape} != output shape {cache[-1].shape}")
        grads: list[np.ndarray] = []
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (cache[i + 1] > 0)
            grads.append(g.sum(axis=0))
            grads.append(cache[i].T @ g)
            g = g @ self.weights[i].T
        grads.reverse()
        return grads, g

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.num_params,):
            raise ValueError(f"expected {self.num_params} parameters, got {flat.shape}")
        pos = 0
        for p in self.params:
            p[...] = flat[pos : pos + p.size].reshape(p.shape)
            pos += p.size

    def copy(self) -> "Mlp":
        twin = Mlp(self.sizes)
        twin.set_flat(self.get_flat())
        return twin

    def soft_update(self, source: "Mlp", polyak: float) -> None:
        """``self <- polyak * self + (1 - polyak) * source``."""
        for mine, theirs in zip(self.params, source.params):
            mine *= polyak
            mine += (1.0 - polyak) * theirs

    def save(self, path: str | Path) -> None:
        """Write an ``.npz`` archive with ``sizes`` and ``W{i}``/``b{i}`` arrays."""
        arrays = {"sizes": np.asarray(self.sizes, dtype=np.int64)}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W{i}"] = w
            arrays[f"b{i}"] = b
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "Mlp":
        with np.load(path) as data:
            net = cls([int(s) for s in data["sizes"]])
            for i in range(len(net.weights)):
                net.weights[i][...] = data[f"W{i}"]
                net.biases[i][...] = data[f"b{i}"]
        return net


class Sgd:
    def __init__(self, lr: float):
        self.lr = float(lr)

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        _check_shapes(params, grads)
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    """Adam with bias correction; updates the parameter arrays in place."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        _check_shapes(params, grads)
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(method: str, lr: float) -> Sgd | Adam:
    if method == "sgd":
        return Sgd(lr)
    if method == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {method!r}")


def _check_shapes(params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
    if len(params) != len(grads):
        raise ValueError("parameter and gradient lists differ in length")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.exp(log_softmax(z, axis))


__all__ = ["Adam", "Mlp", "Sgd", "log_softmax", "make_optimizer", "softmax"]
