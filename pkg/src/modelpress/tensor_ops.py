"""Dense 2-D tensor primitives shared by every other module.

Tensors are plain numpy arrays: 2-D, row-major, float32 storage.
Reductions (matmul, norms, softmax) accumulate in float64 so results are
bit-stable from run to run on the same build, which the search loop's
memoization relies on.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_tensor2d",
    "matmul",
    "axis_l2_norms",
    "softmax",
    "stable_argsort",
]


def as_tensor2d(data, name: str = "tensor") -> np.ndarray:
    """Coerce ``data`` to a 2-D float32 array, rejecting non-finite values."""
    t = np.asarray(data, dtype=np.float32)
    if t.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError(f"{name} contains NaN or Inf")
    return t


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two 2-D float32 tensors, accumulated in float64."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul requires 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions do not match: {a.shape} x {b.shape}")
    out = a.astype(np.float64) @ b.astype(np.float64)
    return out.astype(np.float32)


def axis_l2_norms(t: np.ndarray, axis: str) -> np.ndarray:
    """Per-row or per-column L2 norms of a nonempty 2-D tensor.

    ``axis="row"`` returns one norm per row (reduce across columns);
    ``axis="col"`` returns one norm per column. Result is float64.
    """
    t = np.asarray(t)
    if t.ndim != 2:
        raise ValueError(f"expected a 2-D tensor, got shape {t.shape}")
    if t.size == 0:
        raise ValueError("cannot take norms of an empty tensor")
    if axis == "row":
        red = 1
    elif axis == "col":
        red = 0
    else:
        raise ValueError(f"axis must be 'row' or 'col', got {axis!r}")
    sq = t.astype(np.float64) ** 2
    return np.sqrt(sq.sum(axis=red))


def softmax(v: np.ndarray) -> np.ndarray:
    """Numerically stable softmax of a 1-D vector (max-subtracted, float64)."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"softmax expects a 1-D vector, got shape {v.shape}")
    if v.size == 0:
        raise ValueError("softmax of an empty vector is undefined")
    if not np.all(np.isfinite(v)):
        raise ValueError("softmax input contains NaN or Inf")
    e = np.exp(v - v.max())
    return e / e.sum()


def stable_argsort(v: np.ndarray, order: str = "asc") -> np.ndarray:
    """Index permutation sorting ``v``; equal values keep original order.

    Stability is the tie-break contract used by mask selection and trial
    ranking: for descending order, ties likewise stay in original order
    (so this is not simply the reversed ascending permutation).
    """
    v = np.asarray(v)
    if v.ndim != 1:
        raise ValueError(f"stable_argsort expects a 1-D vector, got shape {v.shape}")
    if order == "asc":
        return np.argsort(v, kind="stable")
    if order == "desc":
        return np.argsort(-v.astype(np.float64), kind="stable")
    raise ValueError(f"order must be 'asc' or 'desc', got {order!r}")
