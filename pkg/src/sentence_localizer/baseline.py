"""
Baseline module: scan-and-localize over sliding windows

Every candidate window is re-encoded on its own by the video Bi-LSTM, mean
pooled and matched against the pooled sentence encoding by the inner product
of two linear projections. No encoder work is shared between windows.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from sentence_localizer.autodiff import PRECISIONS, Node, Tape, UsageError
from sentence_localizer.config_loader import ScanConfig, TrainConfig, Variant
from sentence_localizer.corpus import Corpus, Sample
from sentence_localizer.encoders import BiEncoderParams, embed_tokens, encode_sentence, encode_video
from sentence_localizer.heads import TemporalSpan
from sentence_localizer.metrics import iou
from sentence_localizer.model import ModelDims, init_params, parameter_shapes
from sentence_localizer.optimizer import Adam

logger = logging.getLogger(__name__)

Window = Tuple[int, int]
WindowScorer = Callable[[Sample, int, int], float]

ENCODER_PREFIXES = ('embedding.', 'video.', 'sentence.')


def enumerate_windows(clip_count: int, config: ScanConfig) -> List[Window]:
    """
    All [start, start + length) clip windows, by length then start

    Raises:
        UsageError: If a window length exceeds the clip count
    """
    too_long = [length for length in config.window_lengths if length > clip_count]
    if too_long:
        raise UsageError(f"Window lengths {too_long} exceed the {clip_count} clips of the video")
    windows = []
    for length in config.window_lengths:
        windows.extend((start, start + length) for start in range(0, clip_count - length + 1, config.stride))
    return windows


def window_span(window: Window, clip_count: int) -> TemporalSpan:
    return TemporalSpan(window[0] / clip_count, window[1] / clip_count)


def oracle_scorer(concept_embeddings: np.ndarray) -> WindowScorer:
    """Cosine between a window's mean raw clip feature and the sample's planted concept"""

    def score(sample: Sample, start: int, end: int) -> float:
        if sample.concept is None:
            raise UsageError(f"Sample '{sample.video_id}' carries no planted concept")
        mean = sample.clip_features[:, start:end].mean(axis=1)
        direction = concept_embeddings[sample.concept]
        return float(mean @ direction / max(np.linalg.norm(mean) * np.linalg.norm(direction), 1e-12))

    return score


@dataclass
class ScanBaseline:
    """Frozen encoders plus the two matching projections P_v [h, h] and P_s [h, h]"""
    encoder: Dict[str, np.ndarray]
    P_v: np.ndarray
    P_s: np.ndarray
    config: ScanConfig
    dtype: np.dtype = field(default=np.dtype(np.float32))
    scorer: Optional[WindowScorer] = field(default=None, repr=False)

    @classmethod
    def initialize(cls, train_config: TrainConfig, dims: ModelDims, config: ScanConfig,
                   encoder: Optional[Dict[str, np.ndarray]] = None) -> 'ScanBaseline':
        """
        Baseline with projections drawn from config.seed; encoder tensors are
        taken from a trained model when given, otherwise freshly initialised.
        Everything runs in the model's train.precision.
        """
        rng = np.random.default_rng(config.seed)
        dtype = np.dtype(PRECISIONS[train_config.precision])
        lstm_config = train_config.model_copy(update={'variant': Variant.FULL_AW})
        shapes = {name: shape for name, shape in parameter_shapes(lstm_config, dims).items()
                  if name.startswith(ENCODER_PREFIXES)}
        fresh = init_params(shapes, rng, dtype)
        if encoder is not None:
            fresh.update({name: np.asarray(value, dtype=dtype)
                          for name, value in encoder.items() if name in shapes})
        h = train_config.hidden_size
        projections = init_params({'scan.P_v': (h, h), 'scan.P_s': (h, h)}, rng, dtype)
        return cls(encoder=fresh, P_v=projections['scan.P_v'], P_s=projections['scan.P_s'],
                   config=config, dtype=dtype)

    def _nodes(self, tape: Tape) -> Dict[str, Node]:
        return {name: tape.constant(value, name=name) for name, value in self.encoder.items()}

    def encode_query(self, sample: Sample) -> np.ndarray:
        """Mean-pooled sentence encoding [h]"""
        tape = Tape(dtype=self.dtype, record=False)
        nodes = self._nodes(tape)
        words = embed_tokens(tape, nodes['embedding.table'], np.asarray([sample.tokens]))
        sentence = encode_sentence(tape, words, BiEncoderParams.from_nodes(nodes, 'sentence'))
        return sentence.features.value[0].mean(axis=-1)

    def encode_window(self, sample: Sample, start: int, end: int) -> np.ndarray:
        """Mean-pooled video encoding [h] of clips [start, end), encoded in isolation"""
        tape = Tape(dtype=self.dtype, record=False)
        nodes = self._nodes(tape)
        clips = tape.constant(sample.clip_features[None, :, start:end])
        video = encode_video(tape, clips, BiEncoderParams.from_nodes(nodes, 'video'))
        return video.features.value[0].mean(axis=-1)

    def score_windows(self, sample: Sample, windows: Sequence[Window]) -> np.ndarray:
        if self.scorer is not None:
            return np.asarray([self.scorer(sample, start, end) for start, end in windows])
        query = self.P_s @ self.encode_query(sample)
        return np.asarray([float((self.P_v @ self.encode_window(sample, start, end)) @ query)
                           for start, end in windows])

    def scan_localize(self, sample: Sample) -> TemporalSpan:
        """Highest-scoring window as a clip-aligned span"""
        windows = enumerate_windows(sample.clip_count, self.config)
        if len(windows) == 1:
            return window_span(windows[0], sample.clip_count)
        scores = self.score_windows(sample, windows)
        return window_span(windows[int(np.argmax(scores))], sample.clip_count)


def scan_localize(sample: Sample, baseline: ScanBaseline) -> TemporalSpan:
    return baseline.scan_localize(sample)


def _ranking_pair(sample: Sample, windows: Sequence[Window],
                  rng: np.random.Generator) -> Optional[Tuple[Window, Window]]:
    """Best-overlapping window and a random window disjoint from the ground truth"""
    overlaps = np.asarray([iou(window_span(w, sample.clip_count), sample.gt_norm) for w in windows])
    negatives = np.flatnonzero(overlaps == 0.0)
    if overlaps.max() == 0.0 or negatives.size == 0:
        return None
    return windows[int(np.argmax(overlaps))], windows[int(rng.choice(negatives))]


def train_scan_baseline(corpus: Corpus, baseline: ScanBaseline, epochs: Optional[int] = None,
                        max_samples: int = 200, progress: bool = False) -> List[float]:
    """
    Fit P_v and P_s with a max-margin ranking loss, encoders frozen

    Pooled encodings are computed once per sample; each epoch takes one Adam
    step per sample on max(0, margin - score(positive) + score(negative)).

    Returns:
        Mean hinge loss per epoch
    """
    config = baseline.config
    epochs = config.train_epochs if epochs is None else epochs
    rng = np.random.default_rng(config.seed)
    samples = corpus.split('train')[:max_samples]

    cached = []
    for sample in tqdm(samples, desc='encoding windows', disable=not progress, leave=False):
        windows = enumerate_windows(sample.clip_count, config)
        pair = _ranking_pair(sample, windows, rng)
        if pair is None:
            continue
        cached.append((baseline.encode_query(sample),
                       baseline.encode_window(sample, *pair[0]),
                       baseline.encode_window(sample, *pair[1])))
    if not cached:
        raise UsageError("No training sample has both an overlapping and a disjoint window")

    params = {'P_v': baseline.P_v, 'P_s': baseline.P_s}
    optimizer = Adam(learning_rate=config.learning_rate)
    losses = []
    for epoch in range(1, epochs + 1):
        total = 0.0
        for index in rng.permutation(len(cached)):
            query, positive, negative = cached[index]
            tape = Tape(dtype=baseline.dtype)
            P_v = tape.parameter('P_v', params['P_v'])
            P_s = tape.parameter('P_s', params['P_s'])
            projected_query = tape.matmul(P_s, tape.constant(query))
            pos = tape.matmul(tape.matmul(P_v, tape.constant(positive)), projected_query)
            neg = tape.matmul(tape.matmul(P_v, tape.constant(negative)), projected_query)
            hinge = tape.relu(tape.add(tape.sub(neg, pos), tape.constant(config.margin)))
            grads = tape.backward(hinge)
            optimizer.step(params, grads)
            total += float(hinge.value)
        losses.append(total / len(cached))
        logger.info(f"Scan baseline epoch {epoch}: ranking loss {losses[-1]:.4f}")
    return losses
