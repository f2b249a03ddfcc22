"""Dense float64 tensor kernels shared by the perception, fusion, and loss stacks.

All functions are pure and operate on numpy arrays. Feature embeddings follow a
column-per-token convention: a tensor of shape (dim, tokens) holds one embedding
per column unless a function documents otherwise.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ShapeError",
    "as_tensor",
    "matmul",
    "softmax",
    "reshape",
    "transpose",
    "sinusoidal_pe",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


def as_tensor(data, shape=None) -> np.ndarray:
    """Materialize ``data`` as a C-contiguous float64 array and validate it.

    Args:
        data: Any array-like of reals.
        shape: Optional target shape; the element count must match exactly.

    Raises:
        ShapeError: if the element count does not match ``shape``.
        ValueError: if any element is NaN or infinite.
    """
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        expected = math.prod(shape)
        if arr.size != expected:
            raise ShapeError(
                f"cannot view {arr.size} elements as shape {shape} ({expected} elements)"
            )
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite elements")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product of two rank-2 tensors.

    The inner summation is delegated to BLAS, which is deterministic for a
    fixed build but not literally left-to-right; integer-valued operands are
    exact under any summation order.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def softmax(t, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis`` (max subtraction)."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        raise ShapeError("softmax requires at least rank 1")
    if not -t.ndim <= axis < t.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for rank {t.ndim}")
    shifted = t - np.max(t, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def reshape(t, new_shape) -> np.ndarray:
    """Reshape preserving row-major element order."""
    t = np.asarray(t)
    new_shape = tuple(int(s) for s in new_shape)
    if t.size != math.prod(new_shape):
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elements) to {new_shape}")
    return t.reshape(new_shape)


def transpose(t, perm=None) -> np.ndarray:
    """Permute tensor axes; ``perm`` defaults to reversing the axis order."""
    t = np.asarray(t)
    if perm is None:
        perm = tuple(reversed(range(t.ndim)))
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(t.ndim)):
        raise ShapeError(f"invalid axis permutation {perm} for rank {t.ndim}")
    return np.transpose(t, perm)


def sinusoidal_pe(h: int, w: int, dim: int) -> np.ndarray:
    """Fixed 2-D sinusoidal positional encoding for an ``h`` x ``w`` token grid.

    Channels are split in half: the first ``dim/2`` encode the column (x)
    index, the second half the row (y) index, each as interleaved sin/cos
    pairs over geometric frequencies with base 10000. Positions are flattened
    row-major, so the output column for grid cell (row, col) is row*w + col.

    Returns:
        Array of shape (dim, h*w) with all values in [-1, 1].
    """
    if h <= 0 or w <= 0:
        raise ShapeError(f"grid dimensions must be positive, got ({h}, {w})")
    if dim % 4 != 0:
        raise ShapeError(f"encoding dim must be divisible by 4, got {dim}")
    quarter = dim // 4
    freq = np.power(10000.0, -np.arange(quarter, dtype=np.float64) / quarter)
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    xs = cols.reshape(-1).astype(np.float64)
    ys = rows.reshape(-1).astype(np.float64)
    ang_x = np.outer(freq, xs)
    ang_y = np.outer(freq, ys)
    pe = np.empty((dim, h * w), dtype=np.float64)
    half = dim // 2
    pe[0:half:2] = np.sin(ang_x)
    pe[1:half:2] = np.cos(ang_x)
    pe[half::2] = np.sin(ang_y)
    pe[half + 1 :: 2] = np.cos(ang_y)
    return pe
