"""
Shared pytest configuration: puts src/ on the import path and provides small model fixtures
"""

import os
import sys

import numpy as np
import pytest

project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, os.path.join(project_root, 'src'))

from sentence_localizer.config_loader import SynthConfig, TrainConfig  # noqa: E402
from sentence_localizer.synthetic import generate_corpus  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_synth_config():
    """A corpus small enough to train on inside a unit test"""
    return SynthConfig(clip_count=8, feature_dim=6, concept_count=4, signal_strength=3.0,
                       min_words=4, max_words=5, train_size=24, val_size=8, test_size=8, seed=7)


@pytest.fixture
def tiny_corpus(tiny_synth_config):
    return generate_corpus(tiny_synth_config)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(hidden_size=8, attention_size=8, regression_size=8, word_dim=5, clip_count=8,
                       batch_size=8, epochs=1, dropout=0.0, seed=3)
