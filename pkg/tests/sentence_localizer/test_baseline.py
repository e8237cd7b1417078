"""
Test suite for the scan-and-localize baseline
Following TDD approach with AAA pattern and descriptive naming
"""

import numpy as np
import pytest

from sentence_localizer.autodiff import UsageError
from sentence_localizer.baseline import (
    ScanBaseline, enumerate_windows, oracle_scorer, scan_localize, train_scan_baseline, window_span
)
from sentence_localizer.config_loader import ScanConfig
from sentence_localizer.heads import TemporalSpan
from sentence_localizer.metrics import iou
from sentence_localizer.synthetic import generate_corpus
from sentence_localizer.trainer import model_dims


class TestEnumerateWindows:
    """Sliding-window enumeration"""

    def test_enumerate_windows_with_one_length_steps_by_stride(self):
        """M=8, length 4, stride 2 gives three windows"""
        # Act
        windows = enumerate_windows(8, ScanConfig(window_lengths=[4], stride=2))

        # Assert
        assert windows == [(0, 4), (2, 6), (4, 8)]

    def test_enumerate_windows_with_full_cover_length_returns_single_window(self):
        """M=4, length 4, stride 1"""
        # Act & Assert
        assert enumerate_windows(4, ScanConfig(window_lengths=[4], stride=1)) == [(0, 4)]

    def test_enumerate_windows_with_long_video_matches_closed_form_count(self):
        """M=256, lengths 16, 32, 64, stride 8: 31 + 29 + 25 windows"""
        # Act
        windows = enumerate_windows(256, ScanConfig(window_lengths=[16, 32, 64], stride=8))

        # Assert
        assert len(windows) == 85
        assert all(end <= 256 for _, end in windows)

    def test_enumerate_windows_with_length_above_clip_count_raises_usage_error(self):
        """Windows fit inside the video"""
        # Act & Assert
        with pytest.raises(UsageError):
            enumerate_windows(8, ScanConfig(window_lengths=[4, 16], stride=2))

    def test_window_span_with_clip_window_returns_normalised_span(self):
        """Clip indices become unit-interval coordinates"""
        # Act & Assert
        assert window_span((2, 6), 8) == TemporalSpan(0.25, 0.75)


class TestScanLocalize:
    """Window scoring and selection"""

    def _baseline(self, corpus, train_config, scan_config):
        return ScanBaseline.initialize(train_config, model_dims(corpus), scan_config)

    def test_scan_localize_with_single_window_returns_it(self, tiny_corpus, tiny_train_config):
        """The only window wins regardless of its score"""
        # Arrange
        baseline = self._baseline(tiny_corpus, tiny_train_config, ScanConfig(window_lengths=[8], stride=1))

        # Act
        span = scan_localize(tiny_corpus.split('test')[0], baseline)

        # Assert
        assert span == TemporalSpan(0.0, 1.0)

    def test_scan_localize_with_forced_scores_returns_highest_window(self, tiny_corpus, tiny_train_config):
        """A scorer favouring later windows picks the last one"""
        # Arrange
        baseline = self._baseline(tiny_corpus, tiny_train_config, ScanConfig(window_lengths=[4], stride=4))
        baseline.scorer = lambda sample, start, end: float(start)

        # Act
        span = baseline.scan_localize(tiny_corpus.split('test')[0])

        # Assert
        assert span == TemporalSpan(0.5, 1.0)

    def test_score_windows_with_learned_scorer_returns_one_finite_score_per_window(self, tiny_corpus,
                                                                                    tiny_train_config):
        """Projected inner products for every window"""
        # Arrange
        config = ScanConfig(window_lengths=[2, 4], stride=2)
        baseline = self._baseline(tiny_corpus, tiny_train_config, config)
        sample = tiny_corpus.split('test')[0]
        windows = enumerate_windows(8, config)

        # Act
        scores = baseline.score_windows(sample, windows)

        # Assert
        assert scores.shape == (len(windows),)
        assert np.isfinite(scores).all()

    def test_encode_window_with_clip_range_ignores_clips_outside_it(self, tiny_corpus, tiny_train_config):
        """Windows are encoded in isolation"""
        # Arrange
        baseline = self._baseline(tiny_corpus, tiny_train_config, ScanConfig(window_lengths=[4], stride=4))
        first, second = tiny_corpus.split('test')[:2]

        # Act
        encoded = baseline.encode_window(first, 0, 3)
        again = baseline.encode_window(first, 0, 3)
        other = baseline.encode_window(second, 0, 3)

        # Assert
        np.testing.assert_array_equal(encoded, again)
        assert encoded.shape == (tiny_train_config.hidden_size,)
        assert not np.array_equal(encoded, other)

    def test_scan_localize_with_oracle_scorer_overlaps_ground_truth(self, tiny_synth_config, tiny_train_config):
        """Cosine to the planted concept finds the span (IoU > 0.3) on at least 80 % of samples"""
        # Arrange
        corpus = generate_corpus(tiny_synth_config.model_copy(update={'train_size': 100}))
        baseline = self._baseline(corpus, tiny_train_config, ScanConfig(window_lengths=[2, 3, 4], stride=1))
        baseline.scorer = oracle_scorer(corpus.concept_embeddings())
        samples = corpus.split('train')

        # Act
        hits = [iou(baseline.scan_localize(s), s.gt_norm) > 0.3 for s in samples]

        # Assert
        assert np.mean(hits) >= 0.8


class TestScanTraining:
    """Ranking-loss fitting of the matching projections"""

    def test_train_scan_baseline_with_epochs_returns_finite_losses_and_updates_projections(
            self, tiny_corpus, tiny_train_config):
        """One loss per epoch and moved projection matrices"""
        # Arrange
        baseline = ScanBaseline.initialize(tiny_train_config, model_dims(tiny_corpus),
                                           ScanConfig(window_lengths=[2, 4], stride=2, learning_rate=0.01))
        before = baseline.P_v.copy()

        # Act
        losses = train_scan_baseline(tiny_corpus, baseline, epochs=3)

        # Assert
        assert len(losses) == 3
        assert np.isfinite(losses).all()
        assert not np.array_equal(before, baseline.P_v)

    def test_initialize_with_trained_encoder_copies_encoder_tensors(self, tiny_corpus, tiny_train_config, rng):
        """Encoder tensors come from the given parameter set"""
        # Arrange
        table = rng.standard_normal((tiny_train_config.word_dim, len(tiny_corpus.vocabulary)))

        # Act
        baseline = ScanBaseline.initialize(tiny_train_config, model_dims(tiny_corpus), ScanConfig(),
                                           encoder={'embedding.table': table, 'aw.W1': np.zeros((8, 8))})

        # Assert
        np.testing.assert_array_equal(baseline.encoder['embedding.table'], table.astype(np.float32))
        assert 'aw.W1' not in baseline.encoder

    def test_initialize_with_precision_runs_encoders_in_model_dtype(self, tiny_corpus, tiny_train_config):
        """Baseline tensors and encodings follow train.precision"""
        # Arrange
        sample = tiny_corpus.split('test')[0]

        # Act
        single = ScanBaseline.initialize(tiny_train_config, model_dims(tiny_corpus), ScanConfig())
        double = ScanBaseline.initialize(tiny_train_config.model_copy(update={'precision': 'float64'}),
                                         model_dims(tiny_corpus), ScanConfig())

        # Assert
        assert all(value.dtype == np.float32 for value in single.encoder.values())
        assert single.P_v.dtype == np.float32
        assert single.encode_window(sample, 0, 4).dtype == np.float32
        assert double.encode_query(sample).dtype == np.float64
