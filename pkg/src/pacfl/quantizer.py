"""Stochastic max-q-level quantization of parameter vectors.

Each element is encoded as ``norm * sign * level / q`` where ``level`` is an
integer in ``[0, q]`` drawn so that the dequantized vector is unbiased.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NORM_BITS = 32
FLOAT_BITS = 32


@dataclass(frozen=True)
class QuantizedVec:
    norm: float
    signs: np.ndarray  # int8 in {-1, 0, +1}
    levels: np.ndarray  # int64 in [0, q]
    q: int

    @property
    def dim(self) -> int:
        return int(self.levels.shape[0])

    def __post_init__(self) -> None:
        if self.q < 2:
            raise ValueError("q must be at least 2")
        if self.norm < 0:
            raise ValueError("norm must be nonnegative")
        if self.levels.size and (self.levels.min() < 0 or self.levels.max() > self.q):
            raise ValueError("levels outside [0, q]")
        if self.norm == 0 and np.any(self.levels):
            raise ValueError("zero norm requires all-zero levels")


def quantize(
    vec: np.ndarray, q: int, rng: np.random.Generator, p: float = 2.0
) -> QuantizedVec:
    """Unbiased stochastic rounding of ``|vec| / ||vec||_p`` onto the grid ``k/q``.

    With ``e = |v_d| / ||v||_p`` and ``u = floor(e q)``, the level is ``u + 1``
    with probability ``e q - u`` and ``u`` otherwise.  ``e = 1`` maps to
    ``q`` deterministically.
    """
    q = int(q)
    if q < 2:
        raise ValueError(f"q must be at least 2, got {q}")
    v = np.asarray(vec, dtype=np.float64).ravel()
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite elements")
    norm = float(np.linalg.norm(v, ord=p)) if v.size else 0.0
    if norm == 0.0:
        zeros = np.zeros(v.shape[0], dtype=np.int64)
        return QuantizedVec(0.0, zeros.astype(np.int8), zeros, q)
    # p < inf norms bound |v_d| by the norm, but rounding can push e past 1.
    scaled = np.minimum(np.abs(v) / norm, 1.0) * q
    lower = np.floor(scaled)
    prob_up = scaled - lower
    levels = lower + (rng.random(v.shape[0]) < prob_up)
    return QuantizedVec(norm, np.sign(v).astype(np.int8), levels.astype(np.int64), q)


def quantize_rows(
    rows: np.ndarray, q: int, rng: np.random.Generator, p: float = 2.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quantize every row of a matrix independently with the same rule as :func:`quantize`.

    Returns ``(norms, signs, levels)`` with shapes ``(m,)``, ``(m, d)`` and
    ``(m, d)``; :func:`dequantize_rows` inverts them.
    """
    q = int(q)
    if q < 2:
        raise ValueError(f"q must be at least 2, got {q}")
    v = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if not np.all(np.isfinite(v)):
        raise ValueError("matrix has non-finite elements")
    norms = np.linalg.norm(v, ord=p, axis=1) if v.shape[1] else np.zeros(v.shape[0])
    safe = np.where(norms > 0, norms, 1.0)
    scaled = np.minimum(np.abs(v) / safe[:, None], 1.0) * q
    lower = np.floor(scaled)
    levels = (lower + (rng.random(v.shape) < scaled - lower)).astype(np.int64)
    levels[norms == 0] = 0
    return norms, np.sign(v).astype(np.int8), levels


def dequantize_rows(norms: np.ndarray, signs: np.ndarray, levels: np.ndarray, q: int) -> np.ndarray:
    return norms[:, None] * signs.astype(np.float64) * levels / q


def dequantize(qv: QuantizedVec) -> np.ndarray:
    return qv.norm * qv.signs.astype(np.float64) * qv.levels / qv.q


def bits_per_element(q: int) -> int:
    """``ceil(log2 q)`` magnitude bits plus one sign bit."""
    if q < 2:
        raise ValueError("q must be at least 2")
    # Integer ceil(log2) avoids float error at exact powers of two.
    return (int(q) - 1).bit_length() + 1


def payload_bits(dim: int, q: int) -> int:
    if dim < 0:
        raise ValueError("dim must be nonnegative")
    return int(dim) * bits_per_element(q) + NORM_BITS


def uncompressed_bits(dim: int) -> int:
    return FLOAT_BITS * int(dim)


__all__ = [
    "QuantizedVec",
    "bits_per_element",
    "dequantize",
    "dequantize_rows",
    "payload_bits",
    "quantize",
    "quantize_rows",
    "uncompressed_bits",
]
