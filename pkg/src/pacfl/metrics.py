"""Hypervolume evaluation of per-SP reward vectors and action-share accounting.

Reward vectors are maximized.  To reuse the usual minimization-oriented
hypervolume, every dimension is min-max normalized over the union of all
compared algorithms and then reflected as ``u = v_ref - v_norm``.  The
hypervolume of a set is the measure of the region between its points and
the reference corner ``(v_ref, ..., v_ref)``.
"""

from __future__ import annotations

import struct
from typing import Mapping

import numpy as np

# Little-endian: f and B as float32, n, q and the SP id as uint16.
ACTION_FORMAT = "<ffHHH"
ACTION_BYTES = struct.calcsize(ACTION_FORMAT)


def normalize_invert(
    sets: Mapping[str, np.ndarray], v_ref: float = 1.1, degenerate: str = "raise"
) -> dict[str, np.ndarray]:
    """Normalize every dimension over the union of all sets, then invert.

    Args:
        sets: algorithm name to its ``(runs, R)`` reward vectors.
        v_ref: reference coordinate shared by every dimension.
        degenerate: what to do with a dimension whose values are all equal.
            ``"raise"`` rejects it; ``"best"`` maps it to the best
            normalized value 1, so it scales every volume by 1.

    Raises:
        ValueError: if some dimension has no spread across the union and
            ``degenerate`` is ``"raise"``.
    """
    if degenerate not in ("raise", "best"):
        raise ValueError(f"unknown degenerate policy {degenerate!r}")
    if not sets:
        return {}
    arrays = {k: np.atleast_2d(np.asarray(v, dtype=np.float64)) for k, v in sets.items()}
    dims = {a.shape[1] for a in arrays.values()}
    if len(dims) != 1:
        raise ValueError(f"reward vectors differ in length across sets: {sorted(dims)}")
    union = np.concatenate(list(arrays.values()))
    lo, hi = union.min(axis=0), union.max(axis=0)
    flat = hi <= lo
    if flat.any() and degenerate == "raise":
        raise ValueError(f"degenerate dimension {int(np.flatnonzero(flat)[0])}: max equals min across all runs")
    span = np.where(flat, 1.0, hi - lo)
    return {k: v_ref - np.where(flat, 1.0, (a - lo) / span) for k, a in arrays.items()}


def _check_points(points: np.ndarray, ref: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(0, ref.shape[0])
    pts = np.atleast_2d(pts)
    if pts.shape[1] != ref.shape[0]:
        raise ValueError("points and reference differ in dimension")
    if np.any(pts > ref):
        raise ValueError("a point lies beyond the reference point")
    return pts


def _hv2d(pts: np.ndarray, ref: np.ndarray) -> float:
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    vol, best_y = 0.0, ref[1]
    for x, y in pts[order]:
        if y < best_y:
            vol += (ref[0] - x) * (best_y - y)
            best_y = y
    return vol


def hypervolume_exact(points: np.ndarray, v_ref) -> float:
    """Exact dominated volume for up to three dimensions.

    2-D uses a sorted sweep; 3-D slices along the last axis and sums
    slab-height times the 2-D volume of the points below each slab.
    """
    ref = np.atleast_1d(np.asarray(v_ref, dtype=np.float64))
    pts = _check_points(points, ref)
    if pts.shape[0] == 0:
        return 0.0
    d = ref.shape[0]
    if d == 1:
        return float(ref[0] - pts[:, 0].min())
    if d == 2:
        return float(_hv2d(pts, ref))
    if d == 3:
        pts = pts[np.argsort(pts[:, 2], kind="stable")]
        zs = np.append(pts[:, 2], ref[2])
        vol = 0.0
        for i in range(pts.shape[0]):
            height = zs[i + 1] - zs[i]
            if height > 0:
                vol += height * _hv2d(pts[: i + 1, :2], ref[:2])
        return float(vol)
    raise ValueError("exact hypervolume supports at most 3 dimensions; use hypervolume_mc")


def hypervolume_mc(
    points: np.ndarray, v_ref, samples: int, rng: np.random.Generator, chunk: int = 200_000
) -> tuple[float, float]:
    """Monte Carlo estimate and its binomial standard error.

    Samples are uniform in the box spanned by the component-wise minimum of
    the points and the reference, which contains the whole dominated region.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    ref = np.atleast_1d(np.asarray(v_ref, dtype=np.float64))
    pts = _check_points(points, ref)
    if pts.shape[0] == 0:
        return 0.0, 0.0
    lo = pts.min(axis=0)
    box = float(np.prod(ref - lo))
    if box == 0.0:
        return 0.0, 0.0
    hits, done = 0, 0
    while done < samples:
        n = min(chunk, samples - done)
        x = lo + rng.random((n, ref.shape[0])) * (ref - lo)
        dominated = np.zeros(n, dtype=bool)
        for p in pts:
            dominated |= np.all(x >= p, axis=1)
        hits += int(dominated.sum())
        done += n
    frac = hits / samples
    return box * frac, box * float(np.sqrt(frac * (1.0 - frac) / samples))


def hvi(sets: Mapping[str, np.ndarray], v_ref: float = 1.1, degenerate: str = "raise") -> dict[str, float]:
    """Per-algorithm hypervolume after joint normalization and inversion.

    With more than three SPs the Monte Carlo estimator (10^6 samples, fixed
    stream) stands in for the exact computation.
    """
    inverted = normalize_invert(sets, v_ref, degenerate)
    out = {}
    for name, pts in inverted.items():
        ref = np.full(pts.shape[1], v_ref)
        if pts.shape[1] <= 3:
            out[name] = hypervolume_exact(pts, ref)
        else:
            out[name] = hypervolume_mc(pts, ref, 1_000_000, np.random.default_rng(0))[0]
    return out


def encode_action(sp: int, n: int, f: float, bandwidth: float, q: int) -> bytes:
    """Wire encoding of one SP's action share: 14 bytes."""
    return struct.pack(ACTION_FORMAT, f, bandwidth, n, q, sp)


def decode_action(blob: bytes) -> tuple[int, int, float, float, int]:
    f, bandwidth, n, q, sp = struct.unpack(ACTION_FORMAT, blob)
    return sp, n, f, bandwidth, q


def action_payload_bytes(action=None) -> int:
    """Size of one encoded action share, independent of the action's values."""
    return ACTION_BYTES


__all__ = [
    "ACTION_BYTES",
    "action_payload_bytes",
    "decode_action",
    "encode_action",
    "hvi",
    "hypervolume_exact",
    "hypervolume_mc",
    "normalize_invert",
]
