"""Experiment configuration: JSON schema, defaults, and strict validation.

Configs are nested JSON; unknown keys are rejected and every violation is
reported with its full key path, so a typo never turns into a silently
defaulted hyperparameter.
"""

from __future__ import annotations

import copy
import json

from .corpus import GeneratorConfig
from .exceptions import ConfigError
from .losses import LossWeights
from .sampling import SamplerConfig
from .selftrain import VARIANTS, TrainSettings

DEFAULTS: dict = {
    "corpus": {
        "path": None,
        "identities": 30,
        "eval_identities": 20,
        "cameras": 3,
        "tracklets_per_identity_per_camera": 2,
        "frames_min": 8,
        "frames_max": 24,
        "d_in": 16,
        "sigma_id": 1.0,
        "sigma_cam": 0.4,
        "sigma_drift": 1.2,
        "sigma_noise": 0.3,
        "drift_segment_len": 4,
        "drift_subspace_dim": 4,
        "camera_rotation": False,
    },
    "split": {"mode": "one-shot", "q": 0.2},
    "schedule": {"p": 0.1, "epochs_per_step": 10},
    "loss": {"variant": "full", "lambda": 1.0, "alpha": 0.3, "tau": 0.1},
    "sampler": {"rho": 0.2, "r": 3, "batch_size": 16},
    "optimizer": {"learning_rate": 0.1, "momentum": 0.5, "weight_decay": 0.0005},
    "model": {"hidden": 32, "embed_dim": 32},
    "eval": {
        "ks": [1, 5, 20],
        "cross_camera_filter": True,
        "probe_path": None,
        "gallery_path": None,
    },
    "seeds": {"corpus": 7, "split": None, "train": 1},
    "output_dir": None,
}

_REAL = (int, float)

# path -> (accepted types, predicate, requirement description)
_CHECKS: dict[tuple[str, ...], tuple[tuple, object, str]] = {
    ("corpus", "path"): ((str, type(None)), None, "string path or null"),
    ("corpus", "identities"): ((int,), lambda v: v >= 2, "must be >= 2"),
    ("corpus", "eval_identities"): ((int,), lambda v: v >= 2, "must be >= 2"),
    ("corpus", "cameras"): ((int,), lambda v: v >= 2, "must be >= 2"),
    ("corpus", "tracklets_per_identity_per_camera"): ((int,), lambda v: v >= 1, "must be >= 1"),
    ("corpus", "frames_min"): ((int,), lambda v: v >= 2, "must be >= 2"),
    ("corpus", "frames_max"): ((int,), lambda v: v >= 2, "must be >= 2"),
    ("corpus", "d_in"): ((int,), lambda v: v >= 1, "must be >= 1"),
    ("corpus", "sigma_id"): (_REAL, lambda v: v >= 0, "noise must be >= 0"),
    ("corpus", "sigma_cam"): (_REAL, lambda v: v >= 0, "noise must be >= 0"),
    ("corpus", "sigma_drift"): (_REAL, lambda v: v >= 0, "noise must be >= 0"),
    ("corpus", "sigma_noise"): (_REAL, lambda v: v >= 0, "noise must be >= 0"),
    ("corpus", "drift_segment_len"): ((int,), lambda v: v >= 1, "must be >= 1"),
    ("corpus", "drift_subspace_dim"): (
        (int, type(None)),
        lambda v: v is None or v >= 1,
        "must be >= 1 or null",
    ),
    ("corpus", "camera_rotation"): ((bool,), None, "must be a boolean"),
    ("split", "mode"): ((str,), lambda v: v in ("one-shot", "fraction"), "one-shot or fraction"),
    ("split", "q"): (_REAL, lambda v: 0 < v <= 1, "must lie in (0, 1]"),
    ("schedule", "p"): (_REAL, lambda v: 0 < v < 1 or v == 1, "must lie in (0, 1]"),
    ("schedule", "epochs_per_step"): ((int,), lambda v: v >= 1, "must be >= 1"),
    ("loss", "variant"): ((str,), lambda v: v in VARIANTS, f"must be one of {VARIANTS}"),
    ("loss", "lambda"): (_REAL, lambda v: v >= 0, "must be >= 0"),
    ("loss", "alpha"): (_REAL, lambda v: v > 0, "must be > 0"),
    ("loss", "tau"): (_REAL, lambda v: v > 0, "must be > 0"),
    ("sampler", "rho"): (_REAL, lambda v: 0 < v <= 0.5, "must lie in (0, 0.5]"),
    ("sampler", "r"): ((int,), lambda v: v >= 1, "must be >= 1"),
    ("sampler", "batch_size"): ((int,), lambda v: v >= 2, "must be >= 2"),
    ("optimizer", "learning_rate"): (_REAL, lambda v: v > 0, "must be > 0"),
    ("optimizer", "momentum"): (_REAL, lambda v: 0 <= v < 1, "must lie in [0, 1)"),
    ("optimizer", "weight_decay"): (_REAL, lambda v: v >= 0, "must be >= 0"),
    ("model", "hidden"): ((int,), lambda v: v >= 1, "must be >= 1"),
    ("model", "embed_dim"): ((int,), lambda v: v >= 1, "must be >= 1"),
    ("eval", "ks"): (
        (list,),
        lambda v: v and all(isinstance(k, int) and k >= 1 for k in v),
        "must be a non-empty list of ints >= 1",
    ),
    ("eval", "cross_camera_filter"): ((bool,), None, "must be a boolean"),
    ("eval", "probe_path"): ((str, type(None)), None, "string path or null"),
    ("eval", "gallery_path"): ((str, type(None)), None, "string path or null"),
    ("seeds", "corpus"): ((int,), None, "must be an integer"),
    ("seeds", "split"): ((int, type(None)), None, "must be an integer or null"),
    ("seeds", "train"): ((int,), None, "must be an integer"),
    ("output_dir",): ((str, type(None)), None, "string path or null"),
}


def _merge(defaults, raw, path=()):
    if not isinstance(raw, dict):
        raise ConfigError(f"{'.'.join(path) or '<root>'}: expected an object")
    merged = copy.deepcopy(defaults)
    for key, value in raw.items():
        here = path + (key,)
        if key not in defaults:
            raise ConfigError(f"{'.'.join(here)}: unknown key")
        if isinstance(defaults[key], dict):
            merged[key] = _merge(defaults[key], value, here)
        else:
            merged[key] = value
    return merged


def resolve_config(raw: dict) -> dict:
    """Merge over defaults, reject unknown keys, and validate every leaf."""
    cfg = _merge(DEFAULTS, raw)
    for path, (types, predicate, message) in _CHECKS.items():
        node = cfg
        for key in path:
            node = node[key]
        dotted = ".".join(path)
        # bool is an int subclass; reject it where a number is expected
        if isinstance(node, bool) and bool not in types:
            raise ConfigError(f"{dotted}: {message}")
        if not isinstance(node, types):
            raise ConfigError(f"{dotted}: {message}")
        if predicate is not None and node is not None and not predicate(node):
            raise ConfigError(f"{dotted}: {message}")
    if cfg["corpus"]["frames_max"] < cfg["corpus"]["frames_min"]:
        raise ConfigError("corpus.frames_max: must be >= corpus.frames_min")
    if cfg["split"]["mode"] == "fraction" and not 0 < cfg["split"]["q"] <= 1:
        raise ConfigError("split.q: must lie in (0, 1]")
    return cfg


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<file>: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    return resolve_config(raw)


# ---------------------------------------------------------------------------
# typed views
# ---------------------------------------------------------------------------


def generator_config(cfg: dict) -> GeneratorConfig:
    c = cfg["corpus"]
    return GeneratorConfig(
        identities=c["identities"],
        eval_identities=c["eval_identities"],
        cameras=c["cameras"],
        tracklets_per_identity_per_camera=c["tracklets_per_identity_per_camera"],
        frames_min=c["frames_min"],
        frames_max=c["frames_max"],
        d_in=c["d_in"],
        sigma_id=c["sigma_id"],
        sigma_cam=c["sigma_cam"],
        sigma_drift=c["sigma_drift"],
        sigma_noise=c["sigma_noise"],
        drift_segment_len=c["drift_segment_len"],
        drift_subspace_dim=c["drift_subspace_dim"],
        camera_rotation=c["camera_rotation"],
    )


def train_settings(cfg: dict, checkpoint_dir=None) -> TrainSettings:
    return TrainSettings(
        p=float(cfg["schedule"]["p"]),
        epochs_per_step=cfg["schedule"]["epochs_per_step"],
        variant=cfg["loss"]["variant"],
        weights=LossWeights(lam=float(cfg["loss"]["lambda"]), alpha=float(cfg["loss"]["alpha"])),
        sampler=SamplerConfig(
            rho=float(cfg["sampler"]["rho"]),
            r=cfg["sampler"]["r"],
            batch_size=cfg["sampler"]["batch_size"],
        ),
        learning_rate=float(cfg["optimizer"]["learning_rate"]),
        momentum=float(cfg["optimizer"]["momentum"]),
        weight_decay=float(cfg["optimizer"]["weight_decay"]),
        hidden=cfg["model"]["hidden"],
        embed_dim=cfg["model"]["embed_dim"],
        tau=float(cfg["loss"]["tau"]),
        seed=cfg["seeds"]["train"],
        eval_ks=tuple(cfg["eval"]["ks"]),
        cross_camera_filter=cfg["eval"]["cross_camera_filter"],
        checkpoint_dir=str(checkpoint_dir) if checkpoint_dir is not None else None,
    )


def split_seed(cfg: dict) -> int:
    seed = cfg["seeds"]["split"]
    return cfg["seeds"]["corpus"] if seed is None else seed
