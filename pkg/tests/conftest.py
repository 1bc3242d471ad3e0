import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from secgkit import classify, data
from secgkit.config import PipelineConfig


def small_config(**kw) -> PipelineConfig:
    """Config scaled down for fast fixture corpora."""
    cfg = PipelineConfig()
    cfg.seed = 7
    cfg.workers = 2
    cfg.min_corpus_size = 100
    cfg.dbscan.min_pts = 6
    for key, value in kw.items():
        setattr(cfg, key, value)
    return cfg


@pytest.fixture(scope="session")
def small_corpus():
    train, test, truths = data.synth_corpus(n_train=90, n_test=30, seed=404)
    return train, test, truths


@pytest.fixture(scope="session")
def small_model(small_corpus):
    train, _, _ = small_corpus
    return classify.fit(train, small_config())


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
