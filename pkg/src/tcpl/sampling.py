"""Stochastic samplers used during training.

Mini-tracklet sampling partitions a tracklet's first floor(1/rho)*s frames
into contiguous chunks of s = max(1, floor(rho*n)) frames and draws two
distinct chunks, guaranteeing disjoint, equal-length, temporally coherent
sub-sequences. Negative sampling ranks a batch by distance to the anchor and
draws uniformly from ranks [r, 2r], which filters out both likely positives
and easy negatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Tracklet
from .exceptions import DegeneratePartition, InsufficientBatch, TooShort
from .util import euclidean, floor_tol


@dataclass
class SamplerConfig:
    rho: float = 0.2
    r: int = 3
    batch_size: int = 16

    def __post_init__(self):
        if not 0 < self.rho <= 0.5 or floor_tol(1.0 / self.rho) < 2:
            raise ValueError("rho must lie in (0, 0.5]")
        if self.r < 1:
            raise ValueError("r must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")


def chunk_bounds(n_frames: int, rho: float) -> list[tuple[int, int]]:
    """Frame-index bounds [start, stop) of each mini-tracklet chunk."""
    if n_frames < 2:
        raise TooShort(f"need >= 2 frames, got {n_frames}")
    k = floor_tol(1.0 / rho)
    s = max(1, floor_tol(rho * n_frames))
    usable = min(n_frames, k * s)
    bounds = [(i * s, (i + 1) * s) for i in range(usable // s)]
    if len(bounds) < 2:
        raise DegeneratePartition(f"only {len(bounds)} chunk(s) for n={n_frames}, rho={rho}")
    return bounds


def draw_chunk_pair(n_chunks: int, rng: np.random.Generator) -> tuple[int, int]:
    """Two distinct chunk indices, uniform over ordered pairs."""
    i, j = rng.choice(n_chunks, size=2, replace=False)
    return int(i), int(j)


def sample_mini_tracklets(
    tracklet: Tracklet, cfg: SamplerConfig, rng: np.random.Generator
) -> tuple[Tracklet, Tracklet]:
    """Draw two disjoint equal-length mini-tracklets from one tracklet."""
    bounds = chunk_bounds(tracklet.n_frames, cfg.rho)
    i, j = draw_chunk_pair(len(bounds), rng)
    return _mini(tracklet, bounds[i]), _mini(tracklet, bounds[j])


def _mini(tracklet: Tracklet, bound: tuple[int, int]) -> Tracklet:
    start, stop = bound
    return Tracklet(
        id=tracklet.id,
        camera=tracklet.camera,
        identity=tracklet.identity,
        frames=tracklet.frames[start:stop],
    )


def sample_negative(
    anchor: tuple[int, np.ndarray],
    batch: list[tuple[int, np.ndarray]],
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> int:
    """Pick a negative tracklet id from ranks [r, min(2r, #candidates)].

    Candidates exclude the anchor's source tracklet; ranking is by ascending
    Euclidean distance to the anchor embedding, ties broken by smaller id.
    """
    anchor_id, anchor_emb = anchor
    candidates = [(tid, emb) for tid, emb in batch if tid != anchor_id]
    if len(candidates) < cfg.r:
        raise InsufficientBatch(
            f"{len(candidates)} candidate(s) < rank parameter r={cfg.r}"
        )
    ranked = sorted(
        candidates, key=lambda it: (euclidean(anchor_emb, it[1]), it[0])
    )
    hi = min(2 * cfg.r, len(ranked))
    rank = int(rng.integers(cfg.r, hi + 1))  # 1-based, inclusive range
    return ranked[rank - 1][0]


def sample_batch(corpus: Corpus, batch_size: int, rng: np.random.Generator) -> list[int]:
    """Draw up to batch_size tracklet ids uniformly without replacement."""
    ids = np.array(sorted(t.id for t in corpus.tracklets))
    take = min(batch_size, len(ids))
    perm = rng.permutation(len(ids))[:take]
    return [int(ids[i]) for i in perm]


def epoch_batches(
    corpus: Corpus, batch_size: int, rng: np.random.Generator
) -> list[list[int]]:
    """One epoch: a random permutation of all of D in batch-size windows.

    The final window may be short; every tracklet appears exactly once.
    """
    ids = np.array(sorted(t.id for t in corpus.tracklets))
    perm = rng.permutation(len(ids))
    shuffled = [int(ids[i]) for i in perm]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]
