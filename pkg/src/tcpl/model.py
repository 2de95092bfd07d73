"""Embedding encoder and classifier head.

The encoder mean-pools a tracklet's frame features over time and pushes the
pooled vector through a two-layer rectifier MLP; pooling first makes the
embedding invariant to frame order, which is what lets mini-tracklet
perturbations act purely through frame membership. The classifier is a plain
affine map producing per-identity logits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import DimensionMismatch, EmptyTracklet


@dataclass
class EncoderParams:
    """MLP weights for d_in -> hidden -> d with a rectifier between layers.

    Weight matrices are stored (fan_in, fan_out), so the forward pass is
    x @ w + b throughout.
    """

    w1: ad.GraphNode
    b1: ad.GraphNode
    w2: ad.GraphNode
    b2: ad.GraphNode

    @property
    def dims(self) -> tuple[int, int, int]:
        d_in, hidden = self.w1.value.shape
        return (d_in, hidden, self.w2.value.shape[1])

    def parameters(self) -> list[ad.GraphNode]:
        return [self.w1, self.b1, self.w2, self.b2]

    def embed_values(self, means: np.ndarray) -> np.ndarray:
        """Evaluation-mode forward on pooled features (no graph built).

        Accepts a single (d_in,) vector or a stack of them (n, d_in).
        """
        h = np.maximum(means @ self.w1.value + self.b1.value, 0.0)
        return h @ self.w2.value + self.b2.value


@dataclass
class ClassifierParams:
    """Affine head: logits = embedding @ w + b, one column per identity."""

    w: ad.GraphNode
    b: ad.GraphNode

    @property
    def m_l(self) -> int:
        return self.w.value.shape[1]

    def parameters(self) -> list[ad.GraphNode]:
        return [self.w, self.b]


def _uniform_fan_in(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_encoder(seed: int, dims: tuple[int, int, int]) -> EncoderParams:
    d_in, hidden, d = dims
    if min(d_in, hidden, d) < 1:
        raise ValueError(f"dims must all be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    return EncoderParams(
        w1=ad.parameter(_uniform_fan_in(rng, d_in, hidden)),
        b1=ad.parameter(np.zeros(hidden)),
        w2=ad.parameter(_uniform_fan_in(rng, hidden, d)),
        b2=ad.parameter(np.zeros(d)),
    )


def init_classifier(seed: int, d: int, m_l: int) -> ClassifierParams:
    if d < 1 or m_l < 1:
        raise ValueError(f"classifier dims must be >= 1, got d={d}, m_l={m_l}")
    rng = np.random.default_rng(seed)
    return ClassifierParams(
        w=ad.parameter(_uniform_fan_in(rng, d, m_l)),
        b=ad.parameter(np.zeros(m_l)),
    )


def init_model(
    seed: int, dims: tuple[int, int, int], m_l: int
) -> tuple[EncoderParams, ClassifierParams]:
    """Draw encoder and classifier weights from one seeded stream.

    Weights are uniform, zero-mean, scaled by 1/sqrt(fan_in); biases zero.
    """
    d_in, hidden, d = dims
    if min(d_in, hidden, d) < 1 or m_l < 1:
        raise ValueError(f"dims must all be >= 1, got dims={dims}, m_l={m_l}")
    rng = np.random.default_rng(seed)
    encoder = EncoderParams(
        w1=ad.parameter(_uniform_fan_in(rng, d_in, hidden)),
        b1=ad.parameter(np.zeros(hidden)),
        w2=ad.parameter(_uniform_fan_in(rng, hidden, d)),
        b2=ad.parameter(np.zeros(d)),
    )
    classifier = ClassifierParams(
        w=ad.parameter(_uniform_fan_in(rng, d, m_l)),
        b=ad.parameter(np.zeros(m_l)),
    )
    return encoder, classifier


def embed_mean(params: EncoderParams, mean: np.ndarray) -> ad.GraphNode:
    """Graph forward from an already-pooled (d_in,) feature vector."""
    d_in = params.w1.value.shape[0]
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != (d_in,):
        raise DimensionMismatch(f"pooled feature has shape {mean.shape}, encoder wants ({d_in},)")
    x = ad.constant(mean)
    h = ad.relu(ad.add(ad.matmul(x, params.w1), params.b1))
    return ad.add(ad.matmul(h, params.w2), params.b2)


def embed_frames(params: EncoderParams, frames: np.ndarray) -> ad.GraphNode:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise EmptyTracklet("tracklet must hold at least one frame")
    return embed_mean(params, np.mean(frames, axis=0))


def embed_tracklet(params: EncoderParams, tracklet) -> ad.GraphNode:
    """Embed a tracklet: MLP applied to the temporal mean of its frames."""
    return embed_frames(params, tracklet.frames)


def classify(cls: ClassifierParams, embedding: ad.GraphNode) -> ad.GraphNode:
    """Raw per-identity logits; the softmax lives inside the loss."""
    d = cls.w.value.shape[0]
    if embedding.value.shape != (d,):
        raise DimensionMismatch(
            f"embedding has shape {embedding.value.shape}, classifier wants ({d},)"
        )
    return ad.add(ad.matmul(embedding, cls.w), cls.b)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(path, encoder: EncoderParams, classifier: ClassifierParams, rng_state=None):
    """Write all parameter tensors plus dims, m_l, and the RNG state.

    npz stores the float64 buffers verbatim and the metadata as JSON, so a
    round trip is bit-exact.
    """
    meta = {"dims": list(encoder.dims), "m_l": classifier.m_l, "rng_state": rng_state}
    np.savez(
        path,
        w1=encoder.w1.value,
        b1=encoder.b1.value,
        w2=encoder.w2.value,
        b2=encoder.b2.value,
        cls_w=classifier.w.value,
        cls_b=classifier.b.value,
        meta=np.str_(json.dumps(meta)),
    )


def load_checkpoint(path) -> tuple[EncoderParams, ClassifierParams, dict | None]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        encoder = EncoderParams(
            w1=ad.parameter(data["w1"]),
            b1=ad.parameter(data["b1"]),
            w2=ad.parameter(data["w2"]),
            b2=ad.parameter(data["b2"]),
        )
        classifier = ClassifierParams(
            w=ad.parameter(data["cls_w"]),
            b=ad.parameter(data["cls_b"]),
        )
    return encoder, classifier, meta["rng_state"]
