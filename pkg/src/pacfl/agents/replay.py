"""Episode-level replay storage for the actor-critic agents."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, fields

import numpy as np


@dataclass(frozen=True)
class Transition:
    """One agent's step.  Actions are absolute ``(n, f, B, q)`` arrays.

    ``own_prev``/``opp_prev`` are the actions the step started from; the
    delta was applied to ``own_prev`` to give ``own``.
    """

    obs: np.ndarray
    own_prev: np.ndarray
    delta: np.ndarray
    own: np.ndarray
    opp_prev: np.ndarray
    opp: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool

    def __post_init__(self) -> None:
        if not np.isfinite(self.reward):
            raise ValueError("transition reward must be finite")


@dataclass(frozen=True)
class TransitionBatch:
    """Column-stacked transitions; every field has a leading batch axis."""

    obs: np.ndarray
    own_prev: np.ndarray
    delta: np.ndarray
    own: np.ndarray
    opp_prev: np.ndarray
    opp: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return int(self.reward.shape[0])

    @classmethod
    def stack(cls, items: list[Transition]) -> "TransitionBatch":
        if not items:
            raise ValueError("cannot stack an empty transition list")
        cols = {f.name: np.stack([np.asarray(getattr(t, f.name)) for t in items]) for f in fields(Transition)}
        cols["reward"] = cols["reward"].astype(np.float64)
        cols["done"] = cols["done"].astype(bool)
        return cls(**cols)

    @classmethod
    def concat(cls, batches: list["TransitionBatch"]) -> "TransitionBatch":
        return cls(**{f.name: np.concatenate([getattr(b, f.name) for b in batches]) for f in fields(cls)})

    def take(self, idx: np.ndarray) -> "TransitionBatch":
        return TransitionBatch(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})


class ReplayBuffer:
    """FIFO buffer of whole episodes, each a list of per-agent batches."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("replay capacity must be positive")
        self.capacity = int(capacity)
        self._episodes: deque[list[TransitionBatch]] = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self._episodes)

    def insert(self, episode: list[TransitionBatch]) -> None:
        self._episodes.append(episode)

    def sample(
        self, rng: np.random.Generator, episodes: int, transitions: int | None = None
    ) -> list[TransitionBatch]:
        """Draw ``episodes`` distinct episodes, flatten them per agent and
        optionally keep a random subset of ``transitions`` rows (shared across
        agents so that all agents see the same time steps)."""
        if len(self._episodes) == 0:
            raise ValueError("replay buffer is empty")
        k = min(episodes, len(self._episodes))
        picks = rng.choice(len(self._episodes), size=k, replace=False)
        per_agent = [
            TransitionBatch.concat([self._episodes[int(i)][a] for i in picks])
            for a in range(len(self._episodes[0]))
        ]
        total = len(per_agent[0])
        if transitions is not None and transitions < total:
            rows = np.sort(rng.choice(total, size=transitions, replace=False))
            per_agent = [b.take(rows) for b in per_agent]
        return per_agent


__all__ = ["ReplayBuffer", "Transition", "TransitionBatch"]
