"""Retrieval evaluation: gallery ranking, CMC, mAP, and label-quality metrics.

The protocol embeds probe and gallery tracklets, sorts the gallery by
ascending Euclidean distance (ties by gallery id), and by default drops
gallery entries that share both identity and camera with the probe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, EvalSplit, Tracklet
from .exceptions import (
    EmptyGalleryAfterFilter,
    MissingGroundTruth,
    NoProbes,
    ProbeWithoutMatch,
)
from .model import EncoderParams
from .util import euclidean


@dataclass
class RankingList:
    probe_id: int
    gallery_ids: list[int]  # ascending distance, ties by id
    matches: list[bool]
    distances: list[float]


@dataclass
class EvalReport:
    cmc: dict[int, float]
    map: float
    step: int | None = None
    label_acc_dp: float | None = None
    label_acc_du: float | None = None

    @property
    def rank1(self) -> float:
        return self.cmc[1]

    @property
    def rank5(self) -> float:
        return self.cmc[5]

    @property
    def rank20(self) -> float:
        return self.cmc[20]


def rank_gallery(
    encoder: EncoderParams,
    probe: Tracklet,
    gallery: list[Tracklet],
    cross_camera_filter: bool = True,
) -> RankingList:
    """Rank the gallery by embedding distance to the probe."""
    if probe.identity is None or any(g.identity is None for g in gallery):
        raise MissingGroundTruth("evaluation requires ground-truth identities")
    kept = [
        g
        for g in gallery
        if not (
            cross_camera_filter
            and g.identity == probe.identity
            and g.camera == probe.camera
        )
    ]
    if not kept:
        raise EmptyGalleryAfterFilter(f"probe {probe.id}: empty gallery after filtering")
    p_emb = encoder.embed_values(probe.mean_frame())
    scored = [(euclidean(p_emb, encoder.embed_values(g.mean_frame())), g) for g in kept]
    scored.sort(key=lambda it: (it[0], it[1].id))
    return RankingList(
        probe_id=probe.id,
        gallery_ids=[g.id for _, g in scored],
        matches=[g.identity == probe.identity for _, g in scored],
        distances=[d for d, _ in scored],
    )


def compute_cmc(rankings: list[RankingList], ks) -> dict[int, float]:
    """rank_k = fraction of probes whose first correct match sits at rank <= k."""
    if not rankings:
        raise NoProbes("CMC over an empty ranking set")
    firsts = []
    for r in rankings:
        pos = next((i + 1 for i, m in enumerate(r.matches) if m), None)
        firsts.append(pos)
    return {
        int(k): sum(1 for pos in firsts if pos is not None and pos <= k) / len(firsts)
        for k in ks
    }


def compute_map(rankings: list[RankingList]) -> float:
    """Mean over probes of average precision at the correct ranks."""
    if not rankings:
        raise NoProbes("mAP over an empty ranking set")
    aps = []
    for r in rankings:
        positions = [i + 1 for i, m in enumerate(r.matches) if m]
        if not positions:
            raise ProbeWithoutMatch(f"probe {r.probe_id} has no correct gallery match")
        ap = sum((i + 1) / pos for i, pos in enumerate(positions)) / len(positions)
        aps.append(ap)
    return float(np.mean(aps))


def evaluate_split(
    encoder: EncoderParams,
    split: EvalSplit,
    ks=(1, 5, 20),
    cross_camera_filter: bool = True,
) -> EvalReport:
    """Rank every probe against the gallery and summarize CMC and mAP."""
    ks = tuple(sorted(set(ks) | {1, 5, 20}))
    rankings = [
        rank_gallery(encoder, p, split.gallery, cross_camera_filter)
        for p in split.probe
    ]
    return EvalReport(cmc=compute_cmc(rankings, ks), map=compute_map(rankings))


def label_estimation_accuracy(pseudo, corpus: Corpus) -> float | None:
    """Fraction of assignments matching ground truth; None when empty."""
    if not pseudo:
        return None
    correct = 0
    for pl in pseudo:
        truth = corpus.by_id(pl.tracklet_id).identity
        if truth is None:
            raise MissingGroundTruth(f"tracklet {pl.tracklet_id} has no identity")
        correct += corpus.class_identities[pl.assigned_identity] == truth
    return correct / len(pseudo)


def dump_rankings(rankings: list[RankingList], path) -> None:
    """Debug dump: one probe per line, gallery ids with +/- match flags."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in rankings:
            entries = " ".join(
                f"{gid}{'+' if m else '-'}" for gid, m in zip(r.gallery_ids, r.matches)
            )
            fh.write(f"{r.probe_id}: {entries}\n")
