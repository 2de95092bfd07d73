import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tcpl.corpus import GeneratorConfig, generate_synthetic_corpus, one_shot_split


@pytest.fixture(scope="session")
def small_corpus():
    """Small split corpus plus its eval split; shared read-only."""
    cfg = GeneratorConfig(
        identities=8,
        eval_identities=5,
        cameras=3,
        tracklets_per_identity_per_camera=2,
        d_in=8,
        frames_min=6,
        frames_max=14,
    )
    raw, split = generate_synthetic_corpus(cfg, 17)
    corpus = one_shot_split(raw.tracklets, seed=17)
    return corpus, split


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
