"""Tracklet data model, synthetic corpus generation, split protocols, and I/O.

A tracklet is an ordered stack of per-frame feature vectors tagged with a
camera and a ground-truth identity; the identity is written by the generator
and read only by the evaluator. The synthetic generator plants one Gaussian
prototype per identity, an additive offset per camera, and a piecewise-
constant drift inside each tracklet, so the corpus carries exactly the two
nuisances the consistency losses are meant to absorb while staying simple
enough for closed-form sanity checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DimensionMismatch,
    InvalidConfig,
    MissingIdentity,
    ParseError,
)
from .util import floor_tol


@dataclass(frozen=True, eq=False)
class Tracklet:
    """One camera-contiguous sequence of frame feature vectors."""

    id: int
    camera: int
    identity: int | None
    frames: np.ndarray  # (n_frames, d_in) float64

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValueError(f"tracklet {self.id}: frames must be a non-empty 2d array")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def d_in(self) -> int:
        return self.frames.shape[1]

    def mean_frame(self) -> np.ndarray:
        return np.mean(self.frames, axis=0)


@dataclass
class Corpus:
    """Training tracklets plus the labeled/unlabeled partition.

    labels maps labeled tracklet id -> class index; class_identities maps
    class index -> ground-truth identity (classes are identities sorted
    ascending). A freshly generated or loaded corpus is entirely unlabeled
    until a split protocol runs.
    """

    tracklets: list[Tracklet]
    labeled_ids: set[int] = field(default_factory=set)
    unlabeled_ids: set[int] = field(default_factory=set)
    labels: dict[int, int] = field(default_factory=dict)
    class_identities: list[int] = field(default_factory=list)

    def __post_init__(self):
        ids = [t.id for t in self.tracklets]
        if len(set(ids)) != len(ids):
            raise ValueError("tracklet ids must be unique within a corpus")
        if not self.labeled_ids and not self.unlabeled_ids:
            self.unlabeled_ids = set(ids)
        if self.labeled_ids & self.unlabeled_ids:
            raise ValueError("labeled and unlabeled sets overlap")
        if self.labeled_ids | self.unlabeled_ids != set(ids):
            raise ValueError("labeled and unlabeled sets must cover the corpus")
        d_ins = {t.d_in for t in self.tracklets}
        if len(d_ins) > 1:
            raise DimensionMismatch(f"inconsistent frame dimensions {sorted(d_ins)}")

    @property
    def m_l(self) -> int:
        return len(self.class_identities)

    @property
    def m_u(self) -> int:
        return len(self.unlabeled_ids)

    @property
    def d_in(self) -> int:
        return self.tracklets[0].d_in

    def by_id(self, tid: int) -> Tracklet:
        return self._index()[tid]

    def _index(self) -> dict[int, Tracklet]:
        if not hasattr(self, "_by_id"):
            self._by_id = {t.id: t for t in self.tracklets}
        return self._by_id

    def labeled(self) -> list[Tracklet]:
        return [t for t in self.tracklets if t.id in self.labeled_ids]

    def unlabeled(self) -> list[Tracklet]:
        return [t for t in self.tracklets if t.id in self.unlabeled_ids]


@dataclass
class EvalSplit:
    """Probe/gallery tracklets with identities disjoint from training."""

    probe: list[Tracklet]
    gallery: list[Tracklet]

    def validate(self):
        """Every probe identity must appear in the gallery under another camera."""
        for p in self.probe:
            if not any(
                g.identity == p.identity and g.camera != p.camera for g in self.gallery
            ):
                raise ValueError(f"probe {p.id} has no cross-camera gallery match")


@dataclass
class GeneratorConfig:
    identities: int = 30
    eval_identities: int = 20
    cameras: int = 3
    tracklets_per_identity_per_camera: int = 2
    frames_min: int = 8
    frames_max: int = 24
    d_in: int = 16
    sigma_id: float = 1.0
    sigma_cam: float = 0.4
    sigma_drift: float = 1.2
    sigma_noise: float = 0.3
    drift_segment_len: int = 4
    # Drift lives in a shared random subspace so it is a learnable nuisance;
    # None spreads it over the full feature space.
    drift_subspace_dim: int | None = 4
    # Centered drift sums to ~zero over a tracklet: background change corrupts
    # any chunk-level view but averages out of the whole-tracklet mean.
    drift_centered: bool = True
    camera_rotation: bool = False

    def validate(self):
        if self.identities < 2:
            raise InvalidConfig("identities must be >= 2")
        if self.eval_identities < 2:
            raise InvalidConfig("eval_identities must be >= 2")
        if self.cameras < 2:
            raise InvalidConfig("cameras must be >= 2")
        if self.tracklets_per_identity_per_camera < 1:
            raise InvalidConfig("tracklets_per_identity_per_camera must be >= 1")
        if self.frames_min < 2:
            raise InvalidConfig("frames_min must be >= 2")
        if self.frames_max < self.frames_min:
            raise InvalidConfig("frames_max must be >= frames_min")
        if self.d_in < 1:
            raise InvalidConfig("d_in must be >= 1")
        for name in ("sigma_id", "sigma_cam", "sigma_drift", "sigma_noise"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name}: noise must be >= 0")
        if self.drift_segment_len < 1:
            raise InvalidConfig("drift_segment_len must be >= 1")
        if self.drift_subspace_dim is not None and not (
            1 <= self.drift_subspace_dim <= self.d_in
        ):
            raise InvalidConfig("drift_subspace_dim must lie in [1, d_in]")


def _drift_basis(cfg: GeneratorConfig, rng: np.random.Generator) -> np.ndarray | None:
    if cfg.drift_subspace_dim is None or cfg.drift_subspace_dim == cfg.d_in:
        return None
    raw = rng.normal(size=(cfg.d_in, cfg.drift_subspace_dim))
    q, _ = np.linalg.qr(raw)
    return q  # (d_in, q) orthonormal columns


def _make_tracklet(
    tid: int,
    identity: int,
    camera: int,
    proto: np.ndarray,
    cam_offset: np.ndarray,
    cam_rot: np.ndarray | None,
    cfg: GeneratorConfig,
    basis: np.ndarray | None,
    rng: np.random.Generator,
) -> Tracklet:
    n = int(rng.integers(cfg.frames_min, cfg.frames_max + 1))
    n_seg = -(-n // cfg.drift_segment_len)
    if basis is None:
        seg_drift = rng.normal(size=(n_seg, cfg.d_in)) * cfg.sigma_drift
    else:
        seg_drift = rng.normal(size=(n_seg, basis.shape[1])) @ basis.T * cfg.sigma_drift
    drift = np.repeat(seg_drift, cfg.drift_segment_len, axis=0)[:n]
    if cfg.drift_centered and n_seg > 1:
        drift = drift - np.mean(drift, axis=0)
    noise = rng.normal(size=(n, cfg.d_in)) * cfg.sigma_noise
    base = proto if cam_rot is None else proto @ cam_rot
    frames = base + cam_offset + drift + noise
    return Tracklet(id=tid, camera=camera, identity=identity, frames=frames)


def generate_synthetic_corpus(
    cfg: GeneratorConfig, seed: int
) -> tuple[Corpus, EvalSplit]:
    """Generate a training corpus and an identity-disjoint probe/gallery split.

    Frame model: frame = prototype(identity) + offset(camera) + drift(segment)
    + per-frame noise; deterministic given the seed.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    n_ids = cfg.identities + cfg.eval_identities
    protos = rng.normal(size=(n_ids, cfg.d_in)) * cfg.sigma_id
    offsets = rng.normal(size=(cfg.cameras, cfg.d_in)) * cfg.sigma_cam
    rotations = None
    if cfg.camera_rotation:
        rotations = []
        for _ in range(cfg.cameras):
            q, _ = np.linalg.qr(rng.normal(size=(cfg.d_in, cfg.d_in)))
            rotations.append(q)
    basis = _drift_basis(cfg, rng)

    tid = 0
    train: list[Tracklet] = []
    for identity in range(cfg.identities):
        for camera in range(1, cfg.cameras + 1):
            for _ in range(cfg.tracklets_per_identity_per_camera):
                rot = rotations[camera - 1] if rotations else None
                train.append(
                    _make_tracklet(
                        tid, identity, camera, protos[identity], offsets[camera - 1],
                        rot, cfg, basis, rng,
                    )
                )
                tid += 1

    probe: list[Tracklet] = []
    gallery: list[Tracklet] = []
    for identity in range(cfg.identities, n_ids):
        for camera in range(1, cfg.cameras + 1):
            for k in range(cfg.tracklets_per_identity_per_camera):
                rot = rotations[camera - 1] if rotations else None
                t = _make_tracklet(
                    tid, identity, camera, protos[identity], offsets[camera - 1],
                    rot, cfg, basis, rng,
                )
                tid += 1
                if camera == 1 and k == 0:
                    probe.append(t)
                else:
                    gallery.append(t)

    split = EvalSplit(probe=probe, gallery=gallery)
    split.validate()
    return Corpus(tracklets=train), split


# ---------------------------------------------------------------------------
# split protocols
# ---------------------------------------------------------------------------


def one_shot_split(
    tracklets, mode: str = "one-shot", q: float | None = None, seed: int = 0
) -> Corpus:
    """Partition tracklets into labeled and unlabeled sets.

    one-shot mode labels one random tracklet per identity, preferring camera 1
    and falling back to the next available camera. fraction mode labels a
    uniformly random q-fraction subject to at least one label per identity.
    """
    if isinstance(tracklets, Corpus):
        tracklets = tracklets.tracklets
    tracklets = list(tracklets)
    if any(t.identity is None for t in tracklets):
        raise MissingIdentity("split protocols need ground-truth identities")
    identities = sorted({t.identity for t in tracklets})
    by_identity: dict[int, list[Tracklet]] = {i: [] for i in identities}
    for t in tracklets:
        by_identity[t.identity].append(t)
    rng = np.random.default_rng(seed)

    labeled: set[int] = set()
    if mode == "one-shot":
        for identity in identities:
            members = by_identity[identity]
            cameras = sorted({t.camera for t in members})
            camera = cameras[0] if 1 not in cameras else 1
            pool = sorted(
                (t for t in members if t.camera == camera), key=lambda t: t.id
            )
            labeled.add(pool[int(rng.integers(len(pool)))].id)
    elif mode == "fraction":
        if q is None or not 0 < q <= 1:
            raise ValueError("fraction mode requires 0 < q <= 1")
        for identity in identities:
            pool = sorted(by_identity[identity], key=lambda t: t.id)
            labeled.add(pool[int(rng.integers(len(pool)))].id)
        target = max(len(identities), floor_tol(q * len(tracklets)))
        rest = sorted(t.id for t in tracklets if t.id not in labeled)
        extra = target - len(labeled)
        if extra > 0:
            picks = rng.choice(len(rest), size=extra, replace=False)
            labeled.update(rest[i] for i in sorted(picks))
    else:
        raise ValueError(f"unknown split mode {mode!r}")

    class_of = {identity: k for k, identity in enumerate(identities)}
    by_id = {t.id: t for t in tracklets}
    labels = {tid: class_of[by_id[tid].identity] for tid in labeled}
    return Corpus(
        tracklets=tracklets,
        labeled_ids=labeled,
        unlabeled_ids={t.id for t in tracklets} - labeled,
        labels=labels,
        class_identities=identities,
    )


# ---------------------------------------------------------------------------
# JSON-lines I/O
# ---------------------------------------------------------------------------


def save_tracklets(path, tracklets) -> None:
    """One tracklet per line: {"id", "identity", "camera", "frames"}."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in tracklets:
            record = {
                "id": int(t.id),
                "identity": None if t.identity is None else int(t.identity),
                "camera": int(t.camera),
                "frames": [[float(v) for v in row] for row in t.frames],
            }
            fh.write(json.dumps(record) + "\n")


def load_tracklets(path) -> list[Tracklet]:
    tracklets: list[Tracklet] = []
    d_in: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise ParseError(f"line {lineno}: record must be an object")
            missing = {"id", "identity", "camera", "frames"} - record.keys()
            if missing:
                raise ParseError(f"line {lineno}: missing keys {sorted(missing)}")
            frames = record["frames"]
            if not isinstance(frames, list) or not frames:
                raise ParseError(f"line {lineno}: frames must be a non-empty list")
            widths = {len(row) for row in frames}
            if len(widths) != 1:
                raise ParseError(f"line {lineno}: ragged frame rows {sorted(widths)}")
            width = widths.pop()
            if d_in is None:
                d_in = width
            elif width != d_in:
                raise DimensionMismatch(
                    f"line {lineno}: frame dimension {width} != corpus dimension {d_in}"
                )
            try:
                tracklets.append(
                    Tracklet(
                        id=int(record["id"]),
                        camera=int(record["camera"]),
                        identity=None if record["identity"] is None else int(record["identity"]),
                        frames=np.asarray(frames, dtype=np.float64),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
    if not tracklets:
        raise ParseError("no records")
    return tracklets


def load_feature_corpus(path) -> Corpus:
    """Load a JSON-lines corpus; identities are kept when present."""
    return Corpus(tracklets=load_tracklets(path))
