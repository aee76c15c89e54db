"""Shared fixtures: a small deterministic corpus reused across test modules."""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from shapegraph.data import CorpusConfig, build_corpus


TINY = CorpusConfig(classes=3, shapes_per_class=6, sketches_per_class=4,
                    views=6, feature_dim=16, sketch_dim=12, proto_dim=8,
                    noise=0.2, seed=11)


@pytest.fixture(scope="session")
def tiny_corpus():
    return build_corpus(TINY)


@pytest.fixture(scope="session")
def zeroshot_corpus():
    cfg = CorpusConfig(classes=4, shapes_per_class=5, sketches_per_class=3,
                       views=6, feature_dim=16, sketch_dim=12, proto_dim=8,
                       noise=0.2, mode="zeroshot", unseen=1, seed=7)
    return build_corpus(cfg)
