"""
Synthetic module: planted-interval corpus generation

Each video carries a concept direction added to the clips inside its ground-truth
span on top of Gaussian background noise. The sentence names the concept and
carries a positional cue word matching the tercile of the span midpoint, so both
the span and the words that locate it are recoverable from the data.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from sentence_localizer.config_loader import SynthConfig
from sentence_localizer.corpus import Corpus, Sample, SPLITS, Vocabulary

logger = logging.getLogger(__name__)

CONCEPT_WORDS = (
    'dog', 'guitar', 'ball', 'car', 'horse', 'kitchen', 'water', 'bicycle',
    'drum', 'snow', 'knife', 'camera', 'piano', 'boat', 'ladder', 'kite'
)

CUE_WORDS = {
    0: ('early', 'begin', 'beginning', 'first'),
    1: ('middle', 'midway', 'during'),
    2: ('late', 'end', 'finally', 'last')
}

FILLER_WORDS = ('a', 'the', 'person', 'someone', 'is', 'then', 'with', 'shown', 'video', 'in')


def concept_words(concept_count: int) -> List[str]:
    words = list(CONCEPT_WORDS[:concept_count])
    words.extend(f"concept{i}" for i in range(len(words), concept_count))
    return words


def build_vocabulary(concept_count: int) -> Vocabulary:
    """Fixed vocabulary shared by every split"""
    cues = [word for tercile in sorted(CUE_WORDS) for word in CUE_WORDS[tercile]]
    return Vocabulary(list(FILLER_WORDS) + concept_words(concept_count) + cues)


def cue_tercile(word: str) -> int:
    for tercile, words in CUE_WORDS.items():
        if word in words:
            return tercile
    raise KeyError(word)


def make_concept_embeddings(concept_count: int, feature_dim: int, rng: np.random.Generator) -> np.ndarray:
    """[C, d_v] unit-norm concept directions"""
    embeddings = rng.standard_normal((concept_count, feature_dim))
    return embeddings / np.linalg.norm(embeddings, axis=1, keepdims=True)


def clip_overlap(start: float, end: float, clip_count: int) -> np.ndarray:
    """Fraction of each clip covered by [start, end]"""
    edges = np.arange(clip_count + 1) / clip_count
    covered = np.clip(np.minimum(edges[1:], end) - np.maximum(edges[:-1], start), 0.0, None)
    return covered * clip_count


def draw_span(rng: np.random.Generator, clip_count: int, tercile: int) -> Tuple[float, float]:
    """
    Span whose midpoint falls inside the given tercile, with length in
    [2/M, min(0.5, 2 * distance to the nearer video edge)]
    """
    low = max(tercile / 3.0, 1.0 / clip_count)
    high = min((tercile + 1) / 3.0, 1.0 - 1.0 / clip_count)
    mid = rng.uniform(low, high)
    longest = min(0.5, 2.0 * min(mid, 1.0 - mid))
    length = rng.uniform(2.0 / clip_count, max(longest, 2.0 / clip_count))
    start = max(0.0, mid - 0.5 * length)
    end = min(1.0, mid + 0.5 * length)
    return start, end


def _distractor_span(rng: np.random.Generator, start: float, end: float) -> Optional[Tuple[float, float]]:
    """Same-length span in the larger gap outside [start, end], or None when it does not fit"""
    length = end - start
    gap_start, gap_end = (0.0, start) if start >= 1.0 - end else (end, 1.0)
    if gap_end - gap_start < length:
        return None
    offset = rng.uniform(gap_start, gap_end - length)
    return offset, offset + length


def compose_sentence(rng: np.random.Generator, concept_word: str, cue_word: str,
                     min_words: int, max_words: int) -> List[str]:
    """Concept and cue words inserted at random positions among filler words"""
    length = int(rng.integers(min_words, max_words + 1))
    words = [str(w) for w in rng.choice(FILLER_WORDS, size=max(0, length - 2))]
    words.insert(int(rng.integers(0, len(words) + 1)), concept_word)
    words.insert(int(rng.integers(0, len(words) + 1)), cue_word)
    return words


def generate_sample(rng: np.random.Generator, config: SynthConfig, embeddings: np.ndarray,
                    vocabulary: Vocabulary, video_id: str) -> Sample:
    """Draw one planted sample"""
    clip_count = config.clip_count
    concept = int(rng.integers(0, config.concept_count))
    tercile = int(rng.integers(0, 3))
    start, end = draw_span(rng, clip_count, tercile)

    features = config.noise_scale * rng.standard_normal((config.feature_dim, clip_count))
    features += config.signal_strength * np.outer(embeddings[concept], clip_overlap(start, end, clip_count))
    if config.concept_count > 1 and rng.random() < config.distractor_probability:
        distractor = _distractor_span(rng, start, end)
        if distractor is not None:
            other = int((concept + rng.integers(1, config.concept_count)) % config.concept_count)
            features += config.signal_strength * np.outer(embeddings[other], clip_overlap(*distractor, clip_count))

    cue_word = str(rng.choice(CUE_WORDS[tercile]))
    words = compose_sentence(rng, concept_words(config.concept_count)[concept], cue_word,
                             config.min_words, config.max_words)
    duration = float(rng.uniform(*config.duration_range))
    return Sample(
        video_id=video_id,
        duration=duration,
        clip_features=features,
        tokens=vocabulary.encode(words),
        span_seconds=(start * duration, end * duration),
        concept=concept
    )


def generate_corpus(config: SynthConfig) -> Corpus:
    """
    Generate train, val and test splits fully determined by config.seed

    Returns:
        Corpus whose metadata holds the generator settings and concept embeddings
    """
    if config.signal_strength == 0:
        logger.warning("Signal strength is 0: planted spans are not recoverable from clip features")

    concept_seed, *split_seeds = np.random.SeedSequence(config.seed).spawn(1 + len(SPLITS))
    embeddings = make_concept_embeddings(config.concept_count, config.feature_dim,
                                         np.random.default_rng(concept_seed))
    vocabulary = build_vocabulary(config.concept_count)
    sizes: Dict[str, int] = {'train': config.train_size, 'val': config.val_size, 'test': config.test_size}

    splits = {}
    for name, seed in zip(SPLITS, split_seeds):
        rng = np.random.default_rng(seed)
        splits[name] = [generate_sample(rng, config, embeddings, vocabulary, f"vid_{name}_{i:05d}")
                        for i in range(sizes[name])]
        logger.debug(f"Generated {len(splits[name])} {name} samples")

    metadata = {
        'generator': 'planted-interval',
        'seed': config.seed,
        'synth': config.model_dump(mode='json'),
        'concept_words': concept_words(config.concept_count),
        'concept_embeddings': embeddings.tolist()
    }
    logger.info("Generated planted corpus: " + ', '.join(f"{n}={len(s)}" for n, s in splits.items()))
    return Corpus(splits=splits, vocabulary=vocabulary, metadata=metadata)


def span_concept_alignment(samples: Sequence[Sample], embeddings: np.ndarray) -> np.ndarray:
    """Cosine between each sample's mean in-span clip feature and its planted concept"""
    scores = []
    for sample in samples:
        overlap = clip_overlap(sample.gt_norm.start, sample.gt_norm.end, sample.clip_count)
        inside = sample.clip_features[:, overlap >= 0.5]
        if inside.shape[1] == 0:
            inside = sample.clip_features[:, [int(np.argmax(overlap))]]
        mean = inside.mean(axis=1)
        direction = embeddings[sample.concept]
        scores.append(float(mean @ direction / max(np.linalg.norm(mean) * np.linalg.norm(direction), 1e-12)))
    return np.asarray(scores)
