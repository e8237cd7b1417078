"""
Acceptance suite: desk-scale training runs, variant ordering and timing ratios
Following TDD approach with AAA pattern and descriptive naming

Every test here is marked slow; run with `pytest -m slow`.
"""

import os
from functools import lru_cache

import numpy as np
import pytest

from sentence_localizer.baseline import ScanBaseline
from sentence_localizer.benchmark import benchmark
from sentence_localizer.config_loader import BenchmarkConfig, ScanConfig, TrainConfig, load_config
from sentence_localizer.synthetic import generate_corpus
from sentence_localizer.trainer import Localizer, train

pytestmark = pytest.mark.slow

project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..'))
DESK_CONFIG = os.path.join(project_root, 'config', 'desk.toml')
SEEDS = (0, 1, 2)


@lru_cache(maxsize=None)
def _desk_corpus():
    return generate_corpus(load_config(DESK_CONFIG).synth)


@lru_cache(maxsize=None)
def _desk_report(variant: str, seed: int):
    """Held-out report of one desk-scale run, shared between tests"""
    config = load_config(DESK_CONFIG)
    train_config = TrainConfig.model_validate({**config.train.model_dump(), 'variant': variant, 'seed': seed})
    result = train(_desk_corpus(), train_config, progress=False, sigmas=config.eval.sigmas)
    return Localizer.from_checkpoint(result.checkpoint).evaluate(_desk_corpus().split('test'), config.eval.sigmas)


def _mean_miou(variant: str) -> float:
    return float(np.mean([_desk_report(variant, seed).miou for seed in SEEDS]))


class TestDeskTraining:
    """Learning the planted corpus end to end"""

    @pytest.mark.parametrize('variant', ['full-aw', 'full-af'])
    def test_train_with_desk_corpus_reaches_localization_thresholds(self, variant):
        """Mean over three seeds: mIoU >= 0.6 and R@1,IoU@0.5 >= 0.5"""
        # Act
        reports = [_desk_report(variant, seed) for seed in SEEDS]

        # Assert
        assert np.mean([r.miou for r in reports]) >= 0.6
        assert np.mean([r.recall_at[0.5] for r in reports]) >= 0.5

    def test_train_with_calibration_concentrates_attention_inside_ground_truth(self):
        """Attention mass in the window beats the window's share of clips by 0.1"""
        # Act
        report = _desk_report('full-aw', SEEDS[0])

        # Assert
        assert report.attention_mass - report.window_fraction >= 0.1

    def test_variants_with_desk_corpus_keep_ablation_ordering(self):
        """Calibration helps both heads; regression beats thresholding"""
        # Act
        full_aw, full_af = _mean_miou('full-aw'), _mean_miou('full-af')

        # Assert
        assert full_aw >= _mean_miou('reg-aw')
        assert full_af >= _mean_miou('reg-af')
        assert full_aw >= _mean_miou('ablp')


class TestTimingRatios:
    """Single-pass regression against per-window re-encoding on long videos"""

    @pytest.fixture(scope='class')
    def long_video_setup(self):
        config = load_config(DESK_CONFIG)
        synth = config.synth.model_copy(update={'clip_count': 256, 'train_size': 16, 'val_size': 0,
                                                'test_size': 100})
        corpus = generate_corpus(synth)
        train_config = config.train.model_copy(update={'clip_count': 256, 'epochs': 1})
        checkpoint = train(corpus, train_config, progress=False).checkpoint
        return corpus, checkpoint

    def _time(self, setup, scan_config):
        corpus, checkpoint = setup
        baseline = ScanBaseline.initialize(checkpoint.config, checkpoint.dims, scan_config,
                                           encoder=checkpoint.parameters)
        return benchmark(Localizer.from_checkpoint(checkpoint), baseline, corpus.split('test'),
                         BenchmarkConfig(queries=100, warmup=5))

    def test_benchmark_with_many_windows_shows_model_faster(self, long_video_setup):
        """117 windows over 256 clips: at least 4x faster per sentence"""
        # Act
        report = self._time(long_video_setup, ScanConfig(window_lengths=[8, 16, 32, 64], stride=8))

        # Assert
        assert report.window_count == 117
        assert report.speedup >= 4.0

    def test_benchmark_with_doubled_windows_scales_baseline_only(self, long_video_setup):
        """Twice the windows roughly doubles scan time; model time stays put"""
        # Act
        coarse = self._time(long_video_setup, ScanConfig(window_lengths=[8, 16, 32, 64], stride=8))
        fine = self._time(long_video_setup, ScanConfig(window_lengths=[8, 16, 32, 64], stride=4))

        # Assert
        assert fine.window_count == 230
        ratio = fine.methods['scan'].mean_seconds / coarse.methods['scan'].mean_seconds
        assert 1.6 <= ratio <= 2.4
        model_change = abs(fine.methods['model'].mean_seconds / coarse.methods['model'].mean_seconds - 1.0)
        assert model_change < 0.1
