"""Training objectives.

Four pieces: the intra-sequence consistency loss (L2 distance between the
embeddings of two disjoint mini-tracklets of one tracklet), the
inter-sequence consistency loss (a triplet hinge whose negative comes from
the batch rank-range sampler), the supervised cross-entropy on labeled and
pseudo-labeled tracklets, and the instance-discrimination baseline driven by
a once-per-epoch memory bank.

The joint objective sums, over one batch, cross-entropy for every labeled or
selected member plus lambda times both consistency terms for every member.
Sampling decisions (chunk pair, negative id) are frozen into a BatchPlan
before the graph is built, so the loss is a deterministic function of the
parameters given the plan; that is what makes finite-difference checking and
bit-reproducible training possible. Every variant draws the full plan and
only selects which terms enter the objective, so runs that differ only in
variant consume identical random streams, and a lambda = 0 run is the
ce-only run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .corpus import Corpus, Tracklet
from .exceptions import (
    DimensionMismatch,
    InsufficientBatch,
    LabelOutOfRange,
    UninitializedBank,
)
from .model import ClassifierParams, EncoderParams, classify, embed_mean
from .sampling import SamplerConfig, chunk_bounds, draw_chunk_pair, sample_negative


@dataclass
class LossWeights:
    lam: float = 1.0  # weight of the consistency terms in the joint objective
    alpha: float = 0.3  # triplet margin

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lambda must be finite and non-negative")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


# ---------------------------------------------------------------------------
# individual losses
# ---------------------------------------------------------------------------


def intra_consistency_loss(e_a: ad.GraphNode, e_p: ad.GraphNode) -> ad.GraphNode:
    """L2 distance between the two mini-tracklet embeddings."""
    if e_a.value.shape != e_p.value.shape:
        raise DimensionMismatch(f"{e_a.value.shape} vs {e_p.value.shape}")
    return ad.l2_norm_eps(ad.subtract(e_a, e_p))


def inter_consistency_loss(
    e_a: ad.GraphNode, e_p: ad.GraphNode, e_n: ad.GraphNode, alpha: float
) -> ad.GraphNode:
    """max(0, ||a - p|| - ||a - n|| + alpha)."""
    if not e_a.value.shape == e_p.value.shape == e_n.value.shape:
        raise DimensionMismatch(
            f"{e_a.value.shape} vs {e_p.value.shape} vs {e_n.value.shape}"
        )
    d_ap = ad.l2_norm_eps(ad.subtract(e_a, e_p))
    d_an = ad.l2_norm_eps(ad.subtract(e_a, e_n))
    return ad.hinge_max0(ad.add(ad.subtract(d_ap, d_an), ad.constant(float(alpha))))


def cross_entropy_loss(logits: ad.GraphNode, y: int) -> ad.GraphNode:
    """-log softmax(logits)[y], stabilized through the log-softmax primitive."""
    m = logits.value.shape[0]
    if not 0 <= y < m:
        raise LabelOutOfRange(f"label {y} outside [0, {m})")
    onehot = np.zeros(m)
    onehot[y] = 1.0
    return ad.scalar_multiply(ad.dot(ad.softmax_log(logits), ad.constant(onehot)), -1.0)


# ---------------------------------------------------------------------------
# memory-bank baseline
# ---------------------------------------------------------------------------


class MemoryBank:
    """One stored vector per tracklet instance, refreshed once per epoch.

    The stored vectors enter the loss as constants; gradient flows only
    through the live embedding, matching the update-once-per-epoch scheme
    this baseline models.
    """

    def __init__(self, tracklet_ids, dim: int, tau: float = 0.1):
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.ids = sorted(int(t) for t in tracklet_ids)
        self.slot = {tid: k for k, tid in enumerate(self.ids)}
        self.vectors = np.zeros((len(self.ids), dim))
        self.tau = float(tau)
        self.initialized = False
        self.rejected_updates = 0
        self._updated_this_epoch: set[int] = set()

    def initialize_from(self, embeddings: dict[int, np.ndarray]) -> None:
        """Fill every slot from current embeddings (start of training)."""
        missing = set(self.ids) - embeddings.keys()
        if missing:
            raise UninitializedBank(f"no embedding for slots {sorted(missing)[:5]}")
        for tid in self.ids:
            self.vectors[self.slot[tid]] = embeddings[tid]
        self.initialized = True

    def begin_epoch(self) -> None:
        self._updated_this_epoch.clear()

    def update(self, tid: int, value: np.ndarray) -> None:
        """Replace slot tid; at most once per epoch (extra updates ignored)."""
        if tid in self._updated_this_epoch:
            self.rejected_updates += 1
            return
        self.vectors[self.slot[tid]] = np.asarray(value, dtype=np.float64)
        self._updated_this_epoch.add(tid)

    def get(self, tid: int) -> np.ndarray:
        return self.vectors[self.slot[tid]].copy()


def memory_update(bank: MemoryBank, tid: int, value: np.ndarray) -> None:
    bank.update(tid, value)


def exclusive_baseline_loss(
    tid: int, embedding: ad.GraphNode, bank: MemoryBank
) -> ad.GraphNode:
    """-log P(own slot | embedding) under the bank softmax at temperature tau."""
    if not bank.initialized:
        raise UninitializedBank("bank must be initialized before the loss is built")
    if tid not in bank.slot:
        raise KeyError(f"tracklet {tid} has no bank slot")
    bank_const = ad.constant(bank.vectors.copy())  # snapshot; no grad through v
    logits = ad.scalar_multiply(ad.matmul(bank_const, embedding), 1.0 / bank.tau)
    onehot = np.zeros(len(bank.ids))
    onehot[bank.slot[tid]] = 1.0
    return ad.scalar_multiply(
        ad.dot(ad.softmax_log(logits), ad.constant(onehot)), -1.0
    )


# ---------------------------------------------------------------------------
# joint objective over a batch
# ---------------------------------------------------------------------------


@dataclass
class MemberPlan:
    tracklet_id: int
    chunk_a: tuple[int, int] | None = None
    chunk_p: tuple[int, int] | None = None
    negative_id: int | None = None
    skipped_short: bool = False
    skipped_negative: bool = False


@dataclass
class BatchPlan:
    members: list[MemberPlan]

    @property
    def skipped_short(self) -> int:
        return sum(m.skipped_short for m in self.members)

    @property
    def skipped_negative(self) -> int:
        return sum(m.skipped_negative for m in self.members)


@dataclass
class LossBreakdown:
    """Contributions actually added to the objective (lambda-weighted)."""

    ce_labeled: float = 0.0
    ce_pseudo: float = 0.0
    intra: float = 0.0
    inter: float = 0.0
    total: float = 0.0
    skipped_short: int = 0
    skipped_negative: int = 0

    def accumulate(self, other: "LossBreakdown") -> None:
        self.ce_labeled += other.ce_labeled
        self.ce_pseudo += other.ce_pseudo
        self.intra += other.intra
        self.inter += other.inter
        self.total += other.total
        self.skipped_short += other.skipped_short
        self.skipped_negative += other.skipped_negative


def draw_batch_plan(
    batch_ids: list[int],
    corpus: Corpus,
    encoder: EncoderParams,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> BatchPlan:
    """Freeze all sampling decisions for one batch.

    For each member: draw the disjoint chunk pair, then rank the rest of the
    batch (full-tracklet embeddings) against the anchor mini-tracklet's
    embedding and draw the rank-range negative. Tracklets too short to
    partition skip their consistency terms; a batch window with fewer than r
    candidates skips the inter term.
    """
    tracklets = [corpus.by_id(tid) for tid in batch_ids]
    full_embs = {
        t.id: encoder.embed_values(t.mean_frame()) for t in tracklets
    }
    members: list[MemberPlan] = []
    for t in tracklets:
        plan = MemberPlan(tracklet_id=t.id)
        if t.n_frames < 2:
            plan.skipped_short = True
            members.append(plan)
            continue
        bounds = chunk_bounds(t.n_frames, cfg.rho)
        i, j = draw_chunk_pair(len(bounds), rng)
        plan.chunk_a, plan.chunk_p = bounds[i], bounds[j]
        anchor_emb = encoder.embed_values(
            np.mean(t.frames[plan.chunk_a[0] : plan.chunk_a[1]], axis=0)
        )
        candidates = [(o.id, full_embs[o.id]) for o in tracklets if o.id != t.id]
        try:
            plan.negative_id = sample_negative(
                (t.id, anchor_emb), candidates, cfg, rng
            )
        except InsufficientBatch:
            plan.skipped_negative = True
        members.append(plan)
    return BatchPlan(members=members)


def _chunk_mean(tracklet: Tracklet, bound: tuple[int, int]) -> np.ndarray:
    return np.mean(tracklet.frames[bound[0] : bound[1]], axis=0)


def _sum_nodes(nodes: list[ad.GraphNode]) -> ad.GraphNode | None:
    if not nodes:
        return None
    acc = nodes[0]
    for node in nodes[1:]:
        acc = ad.add(acc, node)
    return acc


def build_joint_loss(
    plan: BatchPlan,
    corpus: Corpus,
    encoder: EncoderParams,
    classifier: ClassifierParams,
    pseudo_labels: dict[int, int],
    weights: LossWeights,
    include_intra: bool = True,
    include_inter: bool = True,
) -> tuple[ad.GraphNode, LossBreakdown]:
    """Assemble the joint objective for one planned batch.

    Cross-entropy applies to members in the labeled set (one-shot labels) or
    in pseudo_labels (selected pseudo-labels); both consistency terms apply
    to every member with a drawn plan. With lambda == 0 the consistency
    sub-graph is not built at all, so such a run is the ce-only run exactly.
    """
    labels = corpus.labels
    ce_labeled: list[ad.GraphNode] = []
    ce_pseudo: list[ad.GraphNode] = []
    intra_terms: list[ad.GraphNode] = []
    inter_terms: list[ad.GraphNode] = []

    use_consistency = weights.lam > 0 and (include_intra or include_inter)
    full_nodes: dict[int, ad.GraphNode] = {}

    def full_node(tid: int) -> ad.GraphNode:
        if tid not in full_nodes:
            full_nodes[tid] = embed_mean(encoder, corpus.by_id(tid).mean_frame())
        return full_nodes[tid]

    for member in plan.members:
        tid = member.tracklet_id
        if tid in labels:
            ce_labeled.append(
                cross_entropy_loss(classify(classifier, full_node(tid)), labels[tid])
            )
        elif tid in pseudo_labels:
            ce_pseudo.append(
                cross_entropy_loss(
                    classify(classifier, full_node(tid)), pseudo_labels[tid]
                )
            )
        if not use_consistency or member.chunk_a is None:
            continue
        t = corpus.by_id(tid)
        e_a = embed_mean(encoder, _chunk_mean(t, member.chunk_a))
        e_p = embed_mean(encoder, _chunk_mean(t, member.chunk_p))
        if include_intra:
            intra_terms.append(intra_consistency_loss(e_a, e_p))
        if include_inter and member.negative_id is not None:
            e_n = full_node(member.negative_id)
            inter_terms.append(inter_consistency_loss(e_a, e_p, e_n, weights.alpha))

    ce_sum = _sum_nodes(ce_labeled + ce_pseudo)
    cons_sum = _sum_nodes(intra_terms + inter_terms)

    if cons_sum is not None:
        weighted = ad.scalar_multiply(cons_sum, weights.lam)
        root = weighted if ce_sum is None else ad.add(ce_sum, weighted)
    elif ce_sum is not None:
        root = ce_sum
    else:
        root = ad.constant(0.0)

    breakdown = LossBreakdown(
        ce_labeled=float(sum(float(n.value) for n in ce_labeled)),
        ce_pseudo=float(sum(float(n.value) for n in ce_pseudo)),
        intra=weights.lam * float(sum(float(n.value) for n in intra_terms)),
        inter=weights.lam * float(sum(float(n.value) for n in inter_terms)),
        total=float(root.value),
        skipped_short=plan.skipped_short,
        skipped_negative=plan.skipped_negative,
    )
    return root, breakdown


def joint_loss(
    batch_ids: list[int],
    corpus: Corpus,
    encoder: EncoderParams,
    classifier: ClassifierParams,
    pseudo_labels: dict[int, int],
    weights: LossWeights,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    include_intra: bool = True,
    include_inter: bool = True,
) -> tuple[ad.GraphNode, LossBreakdown]:
    """Draw a plan and build the joint objective in one call."""
    plan = draw_batch_plan(batch_ids, corpus, encoder, cfg, rng)
    return build_joint_loss(
        plan,
        corpus,
        encoder,
        classifier,
        pseudo_labels,
        weights,
        include_intra=include_intra,
        include_inter=include_inter,
    )


def build_exclusive_loss(
    batch_ids: list[int],
    corpus: Corpus,
    encoder: EncoderParams,
    classifier: ClassifierParams,
    pseudo_labels: dict[int, int],
    weights: LossWeights,
    bank: MemoryBank,
) -> tuple[ad.GraphNode, LossBreakdown, dict[int, np.ndarray]]:
    """Baseline objective: batch CE plus lambda times the bank loss.

    Returns the forward full-tracklet embedding values so the caller can
    refresh the bank in the iteration that consumed each instance.
    """
    labels = corpus.labels
    ce_labeled: list[ad.GraphNode] = []
    ce_pseudo: list[ad.GraphNode] = []
    excl_terms: list[ad.GraphNode] = []
    emb_values: dict[int, np.ndarray] = {}

    for tid in batch_ids:
        node = embed_mean(encoder, corpus.by_id(tid).mean_frame())
        emb_values[tid] = node.value.copy()
        if tid in labels:
            ce_labeled.append(
                cross_entropy_loss(classify(classifier, node), labels[tid])
            )
        elif tid in pseudo_labels:
            ce_pseudo.append(
                cross_entropy_loss(classify(classifier, node), pseudo_labels[tid])
            )
        if weights.lam > 0:
            excl_terms.append(exclusive_baseline_loss(tid, node, bank))

    ce_sum = _sum_nodes(ce_labeled + ce_pseudo)
    excl_sum = _sum_nodes(excl_terms)
    if excl_sum is not None:
        weighted = ad.scalar_multiply(excl_sum, weights.lam)
        root = weighted if ce_sum is None else ad.add(ce_sum, weighted)
    elif ce_sum is not None:
        root = ce_sum
    else:
        root = ad.constant(0.0)

    breakdown = LossBreakdown(
        ce_labeled=float(sum(float(n.value) for n in ce_labeled)),
        ce_pseudo=float(sum(float(n.value) for n in ce_pseudo)),
        total=float(root.value),
    )
    return root, breakdown, emb_values
