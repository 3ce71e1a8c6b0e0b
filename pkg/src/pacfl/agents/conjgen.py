"""Learned opponent-action conjecture.

Instead of scoring all 81**(R-1) opponent joint deltas, a generator network
proposes a factorized distribution over them: one ternary head per opponent
and action dimension.  Training minimizes the negated critic value of its
samples plus a KL pull toward an exponential moving average of the deltas
opponents were actually seen to play.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..neural import Mlp, log_softmax
from ..tcad import NUM_DIMS

TERNARY = np.array([-1, 0, 1], dtype=np.int64)


class GeneratorNet:
    """Maps ``[own action enc, obs enc, opponent summary]`` to ternary logits."""

    def __init__(self, in_dim: int, num_opponents: int, rng: np.random.Generator | None, hidden=(64, 128)):
        self.num_opponents = int(num_opponents)
        self.mlp = Mlp([in_dim, *hidden, self.num_opponents * NUM_DIMS * 3], rng)

    def _reshape(self, flat: np.ndarray) -> np.ndarray:
        return flat.reshape(flat.shape[0], self.num_opponents, NUM_DIMS, 3)

    def log_probs(self, inputs: np.ndarray, cache: bool = False) -> np.ndarray:
        """Per-head log-probabilities, shape ``(batch, R-1, 4, 3)``."""
        x = np.atleast_2d(inputs)
        z = self.mlp.forward(x) if cache else self.mlp.predict(x)
        return log_softmax(self._reshape(z), axis=-1)

    def probs(self, inputs: np.ndarray) -> np.ndarray:
        return np.exp(self.log_probs(inputs))

    def backward(self, grad_logits: np.ndarray) -> list[np.ndarray]:
        grads, _ = self.mlp.backward(grad_logits.reshape(grad_logits.shape[0], -1))
        return grads


def generate(
    probs: np.ndarray, rng: np.random.Generator | None, mode: str = "sample", samples: int = 1
) -> np.ndarray:
    """Draw opponent joint deltas from one factorized distribution.

    ``probs`` has shape ``(R-1, 4, 3)``; the result has shape
    ``(samples, R-1, 4)`` with entries in ``{-1, 0, 1}``.  ``argmax`` mode
    returns the per-head mode (ties resolve toward 0 then -1) once.
    """
    if mode == "argmax":
        order = np.array([1, 0, 2])
        idx = order[np.argmax(probs[..., order], axis=-1)]
        return TERNARY[idx][None]
    if mode != "sample":
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        raise ValueError("sample mode needs a random stream")
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random((samples, *probs.shape[:-1], 1))
    idx = np.minimum((u > cdf[None]).sum(axis=-1), 2)
    return TERNARY[idx]


def head_kl(p: np.ndarray, t: np.ndarray) -> np.ndarray:
    """``KL(p || t)`` over the last axis."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(t)), 0.0)
    return terms.sum(axis=-1)


def generator_loss(
    probs: np.ndarray,
    deltas: np.ndarray,
    q_values: np.ndarray,
    targets: np.ndarray,
    chi: float,
) -> tuple[float, np.ndarray]:
    """Compound loss for one input and its gradient w.r.t. the logits.

    The first term is the sample mean of ``-Q`` over the ``K`` drawn joint
    deltas; its gradient uses the score-function estimator with the sample
    mean as baseline.  The second term is ``chi * sum_heads KL(p || target)``
    in closed form.

    Args:
        probs: ``(R-1, 4, 3)`` generator distribution.
        deltas: ``(K, R-1, 4)`` sampled deltas.
        q_values: ``(K,)`` critic values of the sampled joint actions.
        targets: ``(R-1, 4, 3)`` strictly positive EMA targets.
        chi: KL weight.
    """
    if chi < 0:
        raise ValueError("chi must be nonnegative")
    if np.any(targets <= 0):
        raise ValueError("EMA targets must be strictly positive")
    neg_q = -np.asarray(q_values, dtype=np.float64)
    k = neg_q.shape[0]
    kl = head_kl(probs, targets)
    loss = float(neg_q.mean() + chi * kl.sum())

    onehot = (deltas[..., None] == TERNARY).astype(np.float64)
    adv = neg_q - neg_q.mean()
    grad = np.einsum("k,k...->...", adv, onehot - probs[None]) / k
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.where(probs > 0, np.log(probs) - np.log(targets), 0.0)
    grad += chi * probs * (log_ratio - kl[..., None])
    return loss, grad


class TargetPolicyEMA:
    """Running per-opponent, per-head frequencies of observed deltas."""

    def __init__(self, num_opponents: int, decay: float = 0.99, floor: float = 1e-6):
        if not 0.0 <= decay < 1.0:
            raise ValueError("EMA decay must lie in [0, 1)")
        self.decay = float(decay)
        self.floor = float(floor)
        self.freq = np.full((num_opponents, NUM_DIMS, 3), 1.0 / 3.0)

    def update(self, observed: np.ndarray) -> None:
        """Fold in one round of observed deltas, shape ``(R-1, 4)``."""
        onehot = (np.asarray(observed)[..., None] == TERNARY).astype(np.float64)
        self.freq = self.decay * self.freq + (1.0 - self.decay) * onehot

    def targets(self) -> np.ndarray:
        t = np.maximum(self.freq, self.floor)
        return t / t.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    kl: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs


def softened_argmax(q: np.ndarray, temperature: float) -> np.ndarray:
    """Boltzmann distribution ``softmax(Q / T)``, strictly positive for finite Q."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return np.exp(log_softmax(np.asarray(q, dtype=np.float64) / temperature))


def kl_bound_check(q: np.ndarray, pi_tilde: np.ndarray, pi_dagger: np.ndarray, c: float | None = None) -> BoundCheck:
    """Compare ``|E_pi~[Q] - max Q|`` with ``C * sqrt(KL(pi~ || pi+))``.

    ``C`` defaults to ``max Q - min Q``.  Raises if ``pi~`` puts mass where
    ``pi+`` has none (the KL would be infinite).
    """
    q = np.asarray(q, dtype=np.float64)
    pt = np.asarray(pi_tilde, dtype=np.float64)
    pd = np.asarray(pi_dagger, dtype=np.float64)
    if q.shape != pt.shape or q.shape != pd.shape:
        raise ValueError("Q and both distributions must share one shape")
    if np.any((pt > 0) & (pd <= 0)):
        raise ValueError("support mismatch: reference distribution has zero mass where the approximation does not")
    if c is None:
        c = float(q.max() - q.min())
    kl = float(max(head_kl(pt, pd), 0.0))
    lhs = abs(float(pt @ q) - float(q.max()))
    return BoundCheck(lhs=lhs, rhs=float(c) * np.sqrt(kl), kl=kl)


__all__ = [
    "BoundCheck",
    "GeneratorNet",
    "TargetPolicyEMA",
    "generate",
    "generator_loss",
    "head_kl",
    "kl_bound_check",
    "softened_argmax",
]
