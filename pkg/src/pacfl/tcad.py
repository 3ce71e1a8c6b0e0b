"""Ternary Cartesian action decomposition.

An SP action has four dimensions ``(n, f, B, q)``.  Rather than choosing an
absolute value per dimension, an agent picks an increment in ``{-1, 0, +1}``
per dimension, scaled by that dimension's granularity and projected back onto
the feasible interval.  This keeps the per-agent decision space at 3**4 = 81
regardless of how finely each range is resolved.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .config import ExperimentConfig

NUM_DIMS = 4
NUM_DELTAS = 3**NUM_DIMS

# Row k is the k-th delta in lexicographic order with -1 < 0 < +1.
DELTAS: np.ndarray = np.array(list(itertools.product((-1, 0, 1), repeat=NUM_DIMS)), dtype=np.int64)
DELTAS.setflags(write=False)


@dataclass(frozen=True)
class Action:
    """One SP's per-round decision.  ``f`` and ``B`` are in Hz."""

    n: int
    f: float
    B: float
    q: int

    def as_array(self) -> np.ndarray:
        return np.array([self.n, self.f, self.B, self.q], dtype=np.float64)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Action":
        return cls(int(round(arr[0])), float(arr[1]), float(arr[2]), int(round(arr[3])))


@dataclass(frozen=True)
class ActionSpace:
    """Per-dimension bounds and granularities, ordered ``(n, f, B, q)``."""

    lower: tuple[float, float, float, float]
    upper: tuple[float, float, float, float]
    step: tuple[float, float, float, float]

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> "ActionSpace":
        return cls(
            lower=(1.0, config.f_min, config.b_min, float(config.q_min)),
            upper=(float(config.num_clients), config.f_max, config.b_max, float(config.q_max)),
            step=(float(config.gran_n), config.gran_f, config.gran_b, float(config.gran_q)),
        )

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=np.float64)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=np.float64)

    def contains(self, a: Action) -> bool:
        v = a.as_array()
        return bool(np.all(v >= self.lo) and np.all(v <= self.hi))

    def encode(self, actions: np.ndarray) -> np.ndarray:
        """Normalize absolute actions to ``(n/N, f/f_max, B/B_max, q/q_max)``."""
        return np.asarray(actions, dtype=np.float64) / self.hi


def project(values: np.ndarray, space: ActionSpace) -> np.ndarray:
    """Clamp ``(..., 4)`` action arrays into bounds; n and q become integers."""
    out = np.clip(values, space.lo, space.hi)
    out[..., 0] = np.clip(np.rint(out[..., 0]), space.lower[0], space.upper[0])
    out[..., 3] = np.clip(np.rint(out[..., 3]), space.lower[3], space.upper[3])
    return out


def apply_delta(a: Action, psi, space: ActionSpace) -> Action:
    """``Proj(a + psi * step)`` for a single action."""
    psi = np.asarray(psi)
    if psi.shape != (NUM_DIMS,) or np.any(np.abs(psi) > 1):
        raise ValueError(f"ternary delta must be a 4-vector in {{-1, 0, 1}}, got {psi!r}")
    moved = a.as_array() + psi * np.asarray(space.step)
    return Action.from_array(project(moved, space))


def apply_deltas(a: np.ndarray, deltas: np.ndarray, space: ActionSpace) -> np.ndarray:
    """Vectorized :func:`apply_delta`: ``(4,)`` action times ``(K, 4)`` deltas."""
    return project(np.asarray(a, dtype=np.float64) + deltas * np.asarray(space.step), space)


def enumerate_deltas() -> list[tuple[int, ...]]:
    return [tuple(int(x) for x in row) for row in DELTAS]


def enumerate_joint(num_opponents: int) -> Iterator[tuple[tuple[int, ...], ...]]:
    """Lazily yield every opponent joint delta, first opponent most significant."""
    if num_opponents < 1:
        raise ValueError("need at least one opponent")
    return itertools.product(enumerate_deltas(), repeat=num_opponents)


def joint_delta_indices(num_opponents: int, start: int, stop: int) -> np.ndarray:
    """Per-opponent delta indices of joint combinations ``start..stop-1``.

    Joint index ``k`` has mixed-radix digits in base 81, matching the order of
    :func:`enumerate_joint`.  Returns shape ``(stop - start, num_opponents)``.
    """
    k = np.arange(start, stop, dtype=np.int64)
    digits = np.empty((k.shape[0], num_opponents), dtype=np.int64)
    for j in range(num_opponents - 1, -1, -1):
        digits[:, j] = k % NUM_DELTAS
        k = k // NUM_DELTAS
    return digits


def delta_index(psi) -> int:
    """Position of a ternary delta in :data:`DELTAS`."""
    idx = 0
    for v in psi:
        idx = idx * 3 + int(v) + 1
    return idx


def observed_delta(prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    """Ternary direction of an observed change between two absolute actions."""
    return np.sign(np.asarray(cur, dtype=np.float64) - np.asarray(prev, dtype=np.float64)).astype(np.int64)


def initial_action(config: ExperimentConfig) -> Action:
    """Symmetric episode start: range midpoints, q snapped to its lattice."""
    q_mid = (config.q_min + config.q_max) / 2.0
    q0 = config.q_min + round((q_mid - config.q_min) / config.gran_q) * config.gran_q
    return Action(
        n=int(math.ceil(config.num_clients / 2)),
        f=(config.f_min + config.f_max) / 2.0,
        B=max(config.b_min, config.b_max / config.num_sps),
        q=int(min(max(q0, config.q_min), config.q_max)),
    )


__all__ = [
    "Action",
    "ActionSpace",
    "DELTAS",
    "NUM_DELTAS",
    "apply_delta",
    "apply_deltas",
    "delta_index",
    "enumerate_deltas",
    "enumerate_joint",
    "initial_action",
    "joint_delta_indices",
    "observed_delta",
    "project",
]
