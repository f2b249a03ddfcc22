"""Hierarchical early fusion of lane attribute embeddings.

Lane-level intersection and direction embeddings are expanded to point
granularity, combined into a pairwise score matrix, converted to row
distributions, and used as attention to mix the occupancy embedding into a
fused feature. That feature is gamma-blended onto the lane feature map.

Feature layouts: lane-level embeddings are (E, n_lanes); point-level maps are
(E, n_lanes, n_points) with flat column index lane * n_points + point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor_ops import ShapeError, matmul, reshape, softmax


@dataclass
class FusionParams:
    """Learnable blend gate; 0 makes fusion an exact identity."""

    gamma: float = 0.0


def expand_lane_attrs(f_int: np.ndarray, f_dir: np.ndarray, n_points: int):
    """Repeat each lane column across its point slots.

    Returns a pair of (E, n_lanes, n_points) arrays.
    """
    f_int = np.asarray(f_int, dtype=np.float64)
    f_dir = np.asarray(f_dir, dtype=np.float64)
    if f_int.ndim != 2 or f_int.shape != f_dir.shape:
        raise ShapeError(f"lane embeddings must share shape (E, n_lanes), got {f_int.shape} and {f_dir.shape}")
    if n_points <= 0:
        raise ShapeError(f"n_points must be positive, got {n_points}")
    int_exp = np.repeat(f_int[:, :, None], n_points, axis=2)
    dir_exp = np.repeat(f_dir[:, :, None], n_points, axis=2)
    return int_exp, dir_exp


def int2dir(f_int_exp: np.ndarray, f_dir_exp: np.ndarray) -> np.ndarray:
    """Pairwise score matrix between expanded intersection and direction features.

    Entry (a, b) is the dot product of intersection column a with direction
    column b; output shape is (n_lanes*n_points, n_lanes*n_points).
    """
    f_int_exp = np.asarray(f_int_exp, dtype=np.float64)
    f_dir_exp = np.asarray(f_dir_exp, dtype=np.float64)
    if f_int_exp.shape != f_dir_exp.shape or f_int_exp.ndim != 3:
        raise ShapeError(
            f"expanded embeddings must share shape (E, n_lanes, n_points), got {f_int_exp.shape} and {f_dir_exp.shape}"
        )
    e = f_int_exp.shape[0]
    n = f_int_exp.shape[1] * f_int_exp.shape[2]
    a = reshape(f_int_exp, (e, n))
    b = reshape(f_dir_exp, (e, n))
    return matmul(a.T, b)


def fuse_occupancy(f_occ: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Attention-mix occupancy columns using row distributions of ``scores``.

    Row q of softmax(scores) is the mixing distribution for output column q,
    so every output column is a convex combination of occupancy columns.
    Returns an (E, n_lanes*n_points) array.
    """
    f_occ = np.asarray(f_occ, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if f_occ.ndim != 3:
        raise ShapeError(f"occupancy embedding must be (E, n_lanes, n_points), got {f_occ.shape}")
    e = f_occ.shape[0]
    n = f_occ.shape[1] * f_occ.shape[2]
    if scores.shape != (n, n):
        raise ShapeError(f"score matrix must be ({n}, {n}), got {scores.shape}")
    probs = softmax(scores, axis=-1)
    occ_flat = reshape(f_occ, (e, n))
    return matmul(occ_flat, probs.T)


def blend(f_fusion: np.ndarray, f_double_edge: np.ndarray, gamma: float) -> np.ndarray:
    """Scale-and-add of the fused feature onto the lane feature map."""
    f_fusion = np.asarray(f_fusion, dtype=np.float64)
    f_double_edge = np.asarray(f_double_edge, dtype=np.float64)
    if f_double_edge.ndim != 3:
        raise ShapeError(f"lane feature map must be (E, n_lanes, n_points), got {f_double_edge.shape}")
    if f_fusion.size != f_double_edge.size or f_fusion.shape[0] != f_double_edge.shape[0]:
        raise ShapeError(f"incompatible shapes {f_fusion.shape} and {f_double_edge.shape}")
    return reshape(f_fusion, f_double_edge.shape) * float(gamma) + f_double_edge


def fuse(
    f_int: np.ndarray,
    f_dir: np.ndarray,
    f_occ: np.ndarray,
    f_double_edge: np.ndarray,
    gamma: float = 0.0,
) -> np.ndarray:
    """Full fusion pipeline producing the planning feature map (E, n_lanes, n_points)."""
    n_points = np.asarray(f_occ).shape[2]
    int_exp, dir_exp = expand_lane_attrs(f_int, f_dir, n_points)
    scores = int2dir(int_exp, dir_exp)
    fused = fuse_occupancy(f_occ, scores)
    return blend(fused, f_double_edge, gamma)


def fuse_naive(f_int, f_dir, f_occ, f_double_edge, gamma=0.0) -> np.ndarray:
    """Reference implementation with explicit loops and no reshape calls.

    Kept deliberately independent of the vectorized path so the two can be
    cross-checked; flat index k maps to (lane, point) = (k // n_points,
    k % n_points).
    """
    f_int = np.asarray(f_int, dtype=np.float64)
    f_dir = np.asarray(f_dir, dtype=np.float64)
    f_occ = np.asarray(f_occ, dtype=np.float64)
    f_de = np.asarray(f_double_edge, dtype=np.float64)
    e, n_lanes, n_points = f_occ.shape
    n = n_lanes * n_points

    scores = [[0.0] * n for _ in range(n)]
    for a in range(n):
        for b in range(n):
            acc = 0.0
            for c in range(e):
                acc += f_int[c, a // n_points] * f_dir[c, b // n_points]
            scores[a][b] = acc

    probs = [[0.0] * n for _ in range(n)]
    for q in range(n):
        row_max = max(scores[q])
        denom = 0.0
        for k in range(n):
            probs[q][k] = math.exp(scores[q][k] - row_max)
            denom += probs[q][k]
        for k in range(n):
            probs[q][k] /= denom

    out = np.zeros((e, n_lanes, n_points), dtype=np.float64)
    for c in range(e):
        for q in range(n):
            acc = 0.0
            for k in range(n):
                acc += f_occ[c, k // n_points, k % n_points] * probs[q][k]
            out[c, q // n_points, q % n_points] = acc * gamma + f_de[c, q // n_points, q % n_points]
    return out
