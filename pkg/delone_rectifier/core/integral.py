"""
Summed-area tables in any dimension.
Box sums over integer-aligned boxes in O(2^d) lookups.
"""

import itertools
from typing import Sequence

import numpy as np


def summed_area_table(values: np.ndarray, dtype=np.float64) -> np.ndarray:
    """
    Zero-padded cumulative sums: table[i1, ..., id] = sum of values[:i1, ..., :id].

    Args:
        values: d-dimensional array
        dtype: Accumulation dtype (np.longdouble for extended precision)

    Returns:
        Array with shape values.shape + 1 along every axis
    """
    table = np.zeros(tuple(s + 1 for s in values.shape), dtype=dtype)
    inner = np.asarray(values, dtype=dtype)
    for axis in range(inner.ndim):
        inner = np.cumsum(inner, axis=axis, dtype=dtype)
    table[tuple(slice(1, None) for _ in range(values.ndim))] = inner
    return table


def box_sum(table: np.ndarray, lower: Sequence, upper: Sequence) -> np.ndarray:
    """
    Sum of the original values over lower <= index < upper.

    lower and upper may hold integer arrays (broadcast together) for many boxes at once.
    """
    d = table.ndim
    lower = [np.asarray(v) for v in lower]
    upper = [np.asarray(v) for v in upper]
    total = 0
    for corner in itertools.product((0, 1), repeat=d):
        index = tuple(upper[a] if bit else lower[a] for a, bit in enumerate(corner))
        sign = -1 if (d - sum(corner)) % 2 else 1
        total = total + sign * table[index]
    return total


def sliding_box_sums(table: np.ndarray, size: int) -> np.ndarray:
    """Sums over every size^d box with integer origin inside the table's extent."""
    d = table.ndim
    extent = [s - 1 - size + 1 for s in table.shape]
    if any(e <= 0 for e in extent):
        return np.zeros((0,) * d, dtype=table.dtype)
    grids = np.meshgrid(*[np.arange(e) for e in extent], indexing='ij')
    return box_sum(table, grids, [g + size for g in grids])
