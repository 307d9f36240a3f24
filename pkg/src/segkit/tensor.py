"""Rank-4 tensor helpers and the flat parameter vector.

Tensors are plain ``numpy.ndarray`` objects of shape ``(n, c, h, w)`` stored
C-contiguous (row-major), float64 unless stated otherwise. The helpers here
add the strictness the rest of the package relies on: no broadcasting, and
shape mismatches raise :class:`~segkit.errors.ShapeError` naming both shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptionError, ShapeError

DTYPE = np.float64


def zeros(dims, dtype=DTYPE) -> np.ndarray:
    return full(dims, 0.0, dtype=dtype)


def full(dims, value, dtype=DTYPE) -> np.ndarray:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4 or any(d < 0 for d in dims):
        raise ShapeError(f"expected 4 non-negative dims, got {dims}")
    return np.full(dims, value, dtype=dtype)


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "operands") -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what} shape mismatch: {a.shape} vs {b.shape}")


def check_rank4(x: np.ndarray, what: str = "tensor") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} must be rank 4 (n, c, h, w), got shape {x.shape}")


def flat_index(dims, b, ch, y, x) -> int:
    _, c, h, w = dims
    return ((b * c + ch) * h + y) * w + x


def tmap(fn, t: np.ndarray) -> np.ndarray:
    """Apply a vectorised elementwise function."""
    return np.asarray(fn(t), dtype=t.dtype)


def tzip(fn, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise binary op without broadcasting."""
    check_same_shape(a, b)
    return np.asarray(fn(a, b))


def reduce(t: np.ndarray, how: str = "sum") -> float:
    """Reduce over all elements in a fixed (row-major, pairwise) order."""
    flat = np.ascontiguousarray(t).ravel()
    if how == "sum":
        return float(flat.sum())
    if how == "mean":
        return float(flat.sum() / flat.size)
    if how == "max":
        return float(flat.max())
    raise ValueError(f"unknown reduction {how!r}")


@dataclass
class FlatVector:
    """Concatenated parameter tensors plus the layout to split them again.

    ``layout`` holds ``(name, offset, shape)`` triples in concatenation order.
    """

    data: np.ndarray
    layout: list = field(default_factory=list)

    def __len__(self):
        return self.data.size


def flatten(params, names=None) -> FlatVector:
    params = list(params)
    if names is None:
        names = [str(i) for i in range(len(params))]
    layout = []
    offset = 0
    for name, p in zip(names, params):
        layout.append((name, offset, tuple(p.shape)))
        offset += p.size
    if params:
        data = np.concatenate([np.asarray(p, dtype=DTYPE).ravel() for p in params])
    else:
        data = np.zeros(0, dtype=DTYPE)
    return FlatVector(data, layout)


def unflatten(v: FlatVector) -> list:
    out = []
    expected = 0
    for name, offset, shape in v.layout:
        size = int(np.prod(shape, dtype=np.int64))
        if offset != expected:
            raise CorruptionError(f"layout entry {name!r} starts at {offset}, expected {expected}")
        expected += size
    if expected != v.data.size:
        raise CorruptionError(
            f"layout describes {expected} values but the vector holds {v.data.size}"
        )
    for _, offset, shape in v.layout:
        size = int(np.prod(shape, dtype=np.int64))
        out.append(v.data[offset:offset + size].reshape(shape).copy())
    return out
