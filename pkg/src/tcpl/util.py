"""Shared numeric helpers."""

from __future__ import annotations

import math

import numpy as np

# Tolerance for floor() on products of config-file reals: 1/0.05 evaluates to
# 19.999999999999996 in binary, and the schedule arithmetic must not lose a step
# to that representation error.
_FLOOR_TOL = 1e-9


def floor_tol(x: float) -> int:
    """floor(x) robust to x sitting a few ulps below an integer."""
    return int(math.floor(x + _FLOOR_TOL))


def euclidean(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two equal-shape vectors.

    Spelled as sqrt(sum of squares) everywhere (never BLAS-backed norm) so
    that rankings computed in different call sites agree bit for bit.
    """
    d = a - b
    return float(np.sqrt(np.sum(d * d)))


def distances_to(point: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Euclidean distance from `point` to every row of `rows`.

    Row-wise reduction matches euclidean() bitwise for contiguous rows.
    """
    d = rows - point
    return np.sqrt(np.sum(d * d, axis=1))
