"""One-shot video re-identification on feature-vector tracklets.

Temporal-consistency self-supervision plus progressive pseudo-labeling,
trained end-to-end through a built-in reverse-mode gradient engine, with a
synthetic multi-camera corpus generator and the standard retrieval protocol
(CMC / mAP) for evaluation.
"""

from . import autodiff, corpus, evaluation, losses, model, sampling, selftrain
from .autodiff import (
    GraphNode,
    OptimizerState,
    apply_primitive,
    backward,
    check_gradients,
    sgd_step,
)
from .corpus import (
    Corpus,
    EvalSplit,
    GeneratorConfig,
    Tracklet,
    generate_synthetic_corpus,
    load_feature_corpus,
    one_shot_split,
    save_tracklets,
)
from .evaluation import (
    EvalReport,
    RankingList,
    compute_cmc,
    compute_map,
    evaluate_split,
    label_estimation_accuracy,
    rank_gallery,
)
from .losses import (
    LossWeights,
    MemoryBank,
    cross_entropy_loss,
    exclusive_baseline_loss,
    inter_consistency_loss,
    intra_consistency_loss,
    joint_loss,
    memory_update,
)
from .model import (
    ClassifierParams,
    EncoderParams,
    classify,
    embed_tracklet,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .sampling import SamplerConfig, epoch_batches, sample_batch, sample_mini_tracklets, sample_negative
from .selftrain import (
    PseudoLabel,
    ScheduleState,
    TrainResult,
    TrainSettings,
    assign_pseudo_labels,
    next_sampling_size,
    run_tcpl,
    select_confident,
)

__version__ = "0.1.0"
