"""Synthetic federated tasks, label-skew partitioning, local SGD and aggregation.

Task models are multinomial logistic regression on Gaussian-blob data.  The
parameter vector is the row-major flattening of a ``(classes, features + 1)``
weight matrix whose last column is the bias.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .quantizer import QuantizedVec, dequantize

# (feature_dim, class separation) per difficulty tier; noise is unit variance.
TIERS: dict[str, tuple[int, float]] = {
    "hard": (16, 0.55),
    "medium": (16, 0.9),
    "easy": (16, 1.3),
}


@dataclass(frozen=True)
class SyntheticTask:
    class_count: int
    feature_dim: int
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    difficulty: str

    @property
    def model_dim(self) -> int:
        return self.class_count * (self.feature_dim + 1)


@dataclass(frozen=True)
class ClientShard:
    client: int
    service: int
    indices: np.ndarray
    weight: float

    @property
    def size(self) -> int:
        return int(self.indices.shape[0])


def make_task(
    difficulty: str,
    rng: np.random.Generator,
    class_count: int = 10,
    train_per_class: int = 400,
    test_per_class: int = 100,
) -> SyntheticTask:
    """Gaussian blobs with class means drawn at the tier's separation scale.

    Train and test samples come from consecutive, non-overlapping draws of
    the same stream, so the two sets never share a sample.
    """
    if difficulty not in TIERS:
        raise ValueError(f"unknown difficulty {difficulty!r}; expected one of {sorted(TIERS)}")
    dim, sep = TIERS[difficulty]
    means = rng.normal(0.0, sep, size=(class_count, dim))

    def draw(per_class: int) -> tuple[np.ndarray, np.ndarray]:
        y = np.repeat(np.arange(class_count), per_class)
        x = means[y] + rng.normal(size=(y.shape[0], dim))
        order = rng.permutation(y.shape[0])
        return x[order], y[order]

    train_x, train_y = draw(train_per_class)
    test_x, test_y = draw(test_per_class)
    return SyntheticTask(class_count, dim, train_x, train_y, test_x, test_y, difficulty)


def classes_per_client(class_count: int, non_iid: float) -> int:
    return max(1, int(round(non_iid * class_count)))


def partition(
    task: SyntheticTask,
    num_clients: int,
    non_iid: float,
    rng: np.random.Generator,
    service: int = 0,
    min_keep: float = 0.5,
) -> list[ClientShard]:
    """Label-skew split: each client holds ``max(1, round(rho * C))`` classes.

    Client ``i`` takes the classes ``i*k, i*k+1, ...`` (mod C).  Each class
    pool is split evenly among the clients that claim it, and each client
    keeps a random fraction in ``[min_keep, 1]`` of its share so that shard
    sizes (and hence aggregation weights) differ.
    """
    if num_clients < 1:
        raise ValueError("need at least one client")
    if not 0.0 < non_iid <= 1.0:
        raise ValueError("non_iid must lie in (0, 1]")
    c = task.class_count
    k = classes_per_client(c, non_iid)
    owned = [sorted({(i * k + j) % c for j in range(k)}) for i in range(num_clients)]
    claimants: dict[int, list[int]] = {cls: [] for cls in range(c)}
    for i, classes in enumerate(owned):
        for cls in classes:
            claimants[cls].append(i)

    picked: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
    for cls in range(c):
        holders = claimants[cls]
        if not holders:
            continue
        pool = rng.permutation(np.flatnonzero(task.train_y == cls))
        for i, part in zip(holders, np.array_split(pool, len(holders))):
            picked[i].append(part)

    shards_idx = []
    for i in range(num_clients):
        idx = np.concatenate(picked[i])
        keep = max(1, int(round(idx.shape[0] * rng.uniform(min_keep, 1.0))))
        shards_idx.append(np.sort(rng.permutation(idx)[:keep]))
    total = float(sum(s.shape[0] for s in shards_idx))
    return [
        ClientShard(i, service, idx, idx.shape[0] / total) for i, idx in enumerate(shards_idx)
    ]


def select_clients(shards: Sequence[ClientShard], n: int) -> list[ClientShard]:
    """The ``n`` largest shards, ties broken by client index."""
    ranked = sorted(shards, key=lambda s: (-s.size, s.client))
    return sorted(ranked[:n], key=lambda s: s.client)


def renormalize(weights: Sequence[float]) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if not total > 0:
        raise ValueError("aggregation weights sum to zero")
    return w / total


def init_params(task: SyntheticTask) -> np.ndarray:
    return np.zeros(task.model_dim)


def _logits(params: np.ndarray, x: np.ndarray, class_count: int) -> np.ndarray:
    w = params.reshape(class_count, -1)
    return x @ w[:, :-1].T + w[:, -1]


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_grad(
    params: np.ndarray, x: np.ndarray, y: np.ndarray, class_count: int
) -> np.ndarray:
    """Gradient of the mean cross-entropy over ``(x, y)``."""
    p = _softmax(_logits(params, x, class_count))
    p[np.arange(y.shape[0]), y] -= 1.0
    p /= y.shape[0]
    gw = p.T @ x
    gb = p.sum(axis=0)
    return np.hstack([gw, gb[:, None]]).ravel()


def local_update(
    params: np.ndarray,
    task: SyntheticTask,
    shard: ClientShard,
    lr: float,
    steps: int,
    batch: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """``steps`` mini-batch SGD steps on the shard's cross-entropy loss.

    A batch at least as large as the shard uses the whole shard each step.
    """
    if steps < 1:
        raise ValueError("need at least one local step")
    if shard.size == 0:
        raise ValueError(f"client {shard.client} has an empty shard")
    w = np.array(params, dtype=np.float64, copy=True)
    for _ in range(steps):
        if batch >= shard.size:
            idx = shard.indices
        else:
            idx = shard.indices[rng.choice(shard.size, size=batch, replace=False)]
        w -= lr * cross_entropy_grad(w, task.train_x[idx], task.train_y[idx], task.class_count)
    return w


def aggregate(updates: Sequence[tuple[QuantizedVec, float]]) -> np.ndarray:
    """Weighted sum of dequantized vectors, weights renormalized to one.

    The reduction runs in input order; callers pass clients sorted by index.
    """
    if not updates:
        raise ValueError("nothing to aggregate")
    weights = renormalize([k for _, k in updates])
    out = np.zeros(updates[0][0].dim)
    for (qv, _), k in zip(updates, weights):
        out += k * dequantize(qv)
    return out


def evaluate(params: np.ndarray, x: np.ndarray, y: np.ndarray, class_count: int) -> tuple[float, float]:
    """Top-1 accuracy and mean cross-entropy."""
    if y.shape[0] == 0:
        raise ValueError("empty test set")
    z = _logits(params, x, class_count)
    z = z - z.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-log_p[np.arange(y.shape[0]), y].mean())
    acc = float((z.argmax(axis=1) == y).mean())
    return acc, loss


def export_shards(path: str | Path, task: SyntheticTask, shards: Sequence[ClientShard]) -> None:
    """Write shards as CSV: ``client,service,label,x0..x{F-1}``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client", "service", "label", *[f"x{j}" for j in range(task.feature_dim)]])
        for s in shards:
            for i in s.indices:
                writer.writerow([s.client, s.service, int(task.train_y[i]), *task.train_x[i].tolist()])


__all__ = [
    "ClientShard",
    "SyntheticTask",
    "TIERS",
    "aggregate",
    "classes_per_client",
    "cross_entropy_grad",
    "evaluate",
    "export_shards",
    "init_params",
    "local_update",
    "make_task",
    "partition",
    "renormalize",
    "select_clients",
]
