"""Alternating representation learning and progressive pseudo-labeling.

Each step trains the joint objective for a fixed number of epochs (fresh
classifier, warm-started encoder, fresh optimizer velocity), then assigns
every unlabeled tracklet the identity of its nearest labeled neighbor in
embedding space, advances the selection schedule, and keeps the n_t most
confident assignments as the pseudo-labeled set for the next step. The
selection size grows by p * n_u per step, so the loop runs floor(1/p) + 1
steps and ends with the whole unlabeled pool selected. During the final 20%
of each step's epochs the learning rate drops tenfold and the consistency
weight goes to zero to stabilize the classifier.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .corpus import Corpus, EvalSplit
from .evaluation import EvalReport, evaluate_split, label_estimation_accuracy
from .exceptions import EmptyLabeledSet, NonFiniteLoss
from .losses import (
    LossBreakdown,
    LossWeights,
    MemoryBank,
    build_exclusive_loss,
    build_joint_loss,
    draw_batch_plan,
)
from .model import (
    ClassifierParams,
    EncoderParams,
    init_classifier,
    init_model,
    save_checkpoint,
)
from .sampling import SamplerConfig, epoch_batches
from .util import distances_to, floor_tol

VARIANTS = ("full", "intra", "inter", "ce-only", "exclusive")


@dataclass
class PseudoLabel:
    tracklet_id: int
    assigned_identity: int  # class index into the labeled identities
    confidence: float  # distance to the nearest labeled embedding


@dataclass
class ScheduleState:
    """Progressive-selection counter: n_t = min(n_u, floor(t * p * n_u))."""

    p: float
    n_u: int
    t: int = 0
    n_t: int = 0

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")

    @property
    def total_steps(self) -> int:
        return floor_tol(1.0 / self.p) + 1


def next_sampling_size(state: ScheduleState) -> ScheduleState:
    """Advance one step; closed form avoids drift from repeated addition."""
    t = state.t + 1
    n_t = min(state.n_u, floor_tol(t * state.p * state.n_u))
    return replace(state, t=t, n_t=n_t)


def assign_pseudo_labels(encoder: EncoderParams, corpus: Corpus) -> list[PseudoLabel]:
    """Nearest labeled neighbor in embedding space, for every unlabeled tracklet.

    Ties go to the smaller labeled tracklet id; output is ordered by
    unlabeled tracklet id.
    """
    labeled = sorted(corpus.labeled(), key=lambda t: t.id)
    if not labeled:
        raise EmptyLabeledSet("pseudo-labeling requires at least one labeled tracklet")
    unlabeled = sorted(corpus.unlabeled(), key=lambda t: t.id)
    lab_embs = np.stack([encoder.embed_values(t.mean_frame()) for t in labeled])
    out: list[PseudoLabel] = []
    for t in unlabeled:
        emb = encoder.embed_values(t.mean_frame())
        dists = distances_to(emb, lab_embs)
        k = int(np.argmin(dists))  # first occurrence == smallest labeled id
        out.append(
            PseudoLabel(
                tracklet_id=t.id,
                assigned_identity=corpus.labels[labeled[k].id],
                confidence=float(dists[k]),
            )
        )
    return out


def select_confident(pseudo: list[PseudoLabel], n_t: int) -> list[PseudoLabel]:
    """Top n_t assignments by smallest distance (ties by tracklet id)."""
    if n_t > len(pseudo):
        raise ValueError(f"n_t={n_t} exceeds {len(pseudo)} assignments")
    ranked = sorted(pseudo, key=lambda pl: (pl.confidence, pl.tracklet_id))
    return ranked[:n_t]


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainSettings:
    p: float = 0.1
    epochs_per_step: int = 10
    variant: str = "full"
    weights: LossWeights = field(default_factory=LossWeights)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    learning_rate: float = 0.1
    momentum: float = 0.5
    weight_decay: float = 0.0005
    hidden: int = 32
    embed_dim: int = 32
    tau: float = 0.1
    seed: int = 1
    eval_ks: tuple[int, ...] = (1, 5, 20)
    cross_camera_filter: bool = True
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.epochs_per_step < 1:
            raise ValueError("epochs_per_step must be >= 1")


@dataclass
class StepMetrics:
    step: int
    t: int
    n_t: int
    churn: int
    label_acc_dp: float | None
    label_acc_du: float | None
    ce_labeled: float
    ce_pseudo: float
    intra: float
    inter: float
    total: float
    rank1: float
    rank5: float
    rank20: float
    map: float


@dataclass
class TrainResult:
    encoder: EncoderParams  # best-validation checkpoint
    classifier: ClassifierParams
    best_step: int
    best_rank1: float
    best_map: float
    steps: list[StepMetrics]
    final_label_acc: float | None  # selected-set accuracy at the final step
    skipped_short: int
    skipped_negative: int

    @property
    def final_rank1(self) -> float:
        return self.steps[-1].rank1


def _epoch_plan(epochs: int, epoch: int) -> bool:
    """True when `epoch` (0-based) falls in the final 20% endgame."""
    endgame = epochs // 5
    return endgame > 0 and epoch >= epochs - endgame


def run_tcpl(
    corpus: Corpus, eval_split: EvalSplit, settings: TrainSettings
) -> TrainResult:
    """Run the full alternating loop and return the best checkpoint.

    Model selection follows validation Rank-1, ties broken by mAP, then by
    the earlier step.
    """
    if corpus.m_l == 0:
        raise EmptyLabeledSet("corpus must be split before training")
    d_in = corpus.d_in
    dims = (d_in, settings.hidden, settings.embed_dim)

    root_ss = np.random.SeedSequence(settings.seed)
    init_ss, loop_ss, cls_ss = root_ss.spawn(3)
    init_seed = int(init_ss.generate_state(1)[0])
    encoder, classifier = init_model(init_seed, dims, corpus.m_l)
    loop_rng = np.random.default_rng(loop_ss)

    schedule = ScheduleState(p=settings.p, n_u=len(corpus.unlabeled_ids))
    cls_seeds = cls_ss.generate_state(schedule.total_steps)

    include_intra = settings.variant in ("full", "intra")
    include_inter = settings.variant in ("full", "inter")
    effective = settings.weights
    if settings.variant == "ce-only":
        effective = replace(settings.weights, lam=0.0)

    pseudo_selected: dict[int, int] = {}
    prev_assignment: dict[int, int] = {}
    rows: list[StepMetrics] = []
    best: tuple[float, float, int] | None = None
    best_params: tuple[EncoderParams, ClassifierParams] | None = None
    skipped_short = 0
    skipped_negative = 0

    for step in range(1, schedule.total_steps + 1):
        classifier = init_classifier(int(cls_seeds[step - 1]), settings.embed_dim, corpus.m_l)
        params = encoder.parameters() + classifier.parameters()
        opt = ad.OptimizerState.for_params(
            params, settings.learning_rate, settings.momentum, settings.weight_decay
        )
        bank = None
        if settings.variant == "exclusive":
            bank = MemoryBank(
                [t.id for t in corpus.tracklets], settings.embed_dim, tau=settings.tau
            )
            bank.initialize_from(
                {t.id: encoder.embed_values(t.mean_frame()) for t in corpus.tracklets}
            )

        step_breakdown = LossBreakdown()
        for epoch in range(settings.epochs_per_step):
            endgame = _epoch_plan(settings.epochs_per_step, epoch)
            opt.learning_rate = (
                settings.learning_rate / 10.0 if endgame else settings.learning_rate
            )
            epoch_weights = replace(effective, lam=0.0) if endgame else effective
            if bank is not None:
                bank.begin_epoch()
            epoch_breakdown = LossBreakdown()
            for batch_ids in epoch_batches(corpus, settings.sampler.batch_size, loop_rng):
                if bank is not None:
                    root, breakdown, emb_values = build_exclusive_loss(
                        batch_ids, corpus, encoder, classifier,
                        pseudo_selected, epoch_weights, bank,
                    )
                else:
                    plan = draw_batch_plan(
                        batch_ids, corpus, encoder, settings.sampler, loop_rng
                    )
                    root, breakdown = build_joint_loss(
                        plan, corpus, encoder, classifier,
                        pseudo_selected, epoch_weights,
                        include_intra=include_intra, include_inter=include_inter,
                    )
                if not np.isfinite(root.value):
                    raise NonFiniteLoss(
                        f"non-finite loss at step {step}, epoch {epoch}"
                    )
                ad.backward(root)
                ad.sgd_step(params, opt)
                if bank is not None:
                    for tid in batch_ids:
                        bank.update(tid, emb_values[tid])
                epoch_breakdown.accumulate(breakdown)
            step_breakdown = epoch_breakdown  # report the step's last epoch

        assignment = assign_pseudo_labels(encoder, corpus)
        schedule = next_sampling_size(schedule)
        selected = select_confident(assignment, schedule.n_t)

        churn = sum(
            1
            for pl in selected
            if pl.tracklet_id in prev_assignment
            and prev_assignment[pl.tracklet_id] != pl.assigned_identity
        )
        prev_assignment = {pl.tracklet_id: pl.assigned_identity for pl in assignment}
        pseudo_selected = {pl.tracklet_id: pl.assigned_identity for pl in selected}

        acc_dp = label_estimation_accuracy(selected, corpus)
        acc_du = label_estimation_accuracy(assignment, corpus)
        report: EvalReport = evaluate_split(
            encoder, eval_split, ks=settings.eval_ks,
            cross_camera_filter=settings.cross_camera_filter,
        )
        skipped_short += step_breakdown.skipped_short
        skipped_negative += step_breakdown.skipped_negative

        rows.append(
            StepMetrics(
                step=step,
                t=schedule.t,
                n_t=schedule.n_t,
                churn=churn,
                label_acc_dp=acc_dp,
                label_acc_du=acc_du,
                ce_labeled=step_breakdown.ce_labeled,
                ce_pseudo=step_breakdown.ce_pseudo,
                intra=step_breakdown.intra,
                inter=step_breakdown.inter,
                total=step_breakdown.total,
                rank1=report.rank1,
                rank5=report.rank5,
                rank20=report.rank20,
                map=report.map,
            )
        )

        if settings.checkpoint_dir is not None:
            save_checkpoint(
                f"{settings.checkpoint_dir}/step_{step:03d}.npz",
                encoder,
                classifier,
                rng_state=loop_rng.bit_generator.state,
            )

        key = (report.rank1, report.map)
        if best is None or key > (best[0], best[1]):
            best = (report.rank1, report.map, step)
            best_params = (copy.deepcopy(encoder), copy.deepcopy(classifier))

    assert best is not None and best_params is not None
    final_acc = rows[-1].label_acc_dp
    return TrainResult(
        encoder=best_params[0],
        classifier=best_params[1],
        best_step=best[2],
        best_rank1=best[0],
        best_map=best[1],
        steps=rows,
        final_label_acc=final_acc,
        skipped_short=skipped_short,
        skipped_negative=skipped_negative,
    )
