"""Independent brute-force oracles used to freeze expected test values.

Everything here is deliberately written from the definitions (loops,
exhaustive argmins, direct finite differences) rather than through the
package's own code paths, so a bug cannot cancel itself out.
"""

from __future__ import annotations

import math

import numpy as np


def numeric_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, entry by entry."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    for j in range(x.size):
        plus = x.copy()
        minus = x.copy()
        plus.reshape(-1)[j] += h
        minus.reshape(-1)[j] -= h
        flat[j] = (f(plus) - f(minus)) / (2.0 * h)
    return grad


def pairwise_dist(a, b) -> float:
    return math.dist(list(a), list(b))


def nearest_labeled(unlabeled_emb, labeled: list[tuple[int, np.ndarray]]):
    """(labeled id, distance) of the nearest labeled embedding; ties by id."""
    best_id, best_d = None, None
    for lid, emb in sorted(labeled, key=lambda it: it[0]):
        d = pairwise_dist(unlabeled_emb, emb)
        if best_d is None or d < best_d:
            best_id, best_d = lid, d
    return best_id, best_d


def rank_by_distance(probe_emb, gallery: list[tuple[int, np.ndarray]]) -> list[int]:
    """Gallery ids by ascending distance, ties by id (insertion-sort style)."""
    scored = [(pairwise_dist(probe_emb, emb), gid) for gid, emb in gallery]
    return [gid for _, gid in sorted(scored)]


def cmc_at_k(match_lists: list[list[bool]], k: int) -> float:
    hits = 0
    for matches in match_lists:
        first = None
        for pos, m in enumerate(matches, start=1):
            if m:
                first = pos
                break
        if first is not None and first <= k:
            hits += 1
    return hits / len(match_lists)


def average_precision(matches: list[bool]) -> float:
    positions = [pos for pos, m in enumerate(matches, start=1) if m]
    if not positions:
        raise ValueError("no correct match")
    return sum((i + 1) / pos for i, pos in enumerate(positions)) / len(positions)


def mean_average_precision(match_lists: list[list[bool]]) -> float:
    return sum(average_precision(m) for m in match_lists) / len(match_lists)
