"""
Corpus module: samples, vocabulary, span normalisation, clip pooling and the
line-delimited corpus format
"""

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from sentence_localizer.autodiff import UsageError
from sentence_localizer.heads import TemporalSpan

logger = logging.getLogger(__name__)

CORPUS_FORMAT = 'sentence-corpus'
CORPUS_VERSION = 1
SPLITS = ('train', 'val', 'test')
UNKNOWN_TOKEN = '<unk>'
VOCABULARY_FILE = 'vocab.txt'
METADATA_FILE = 'concepts.json'
RECORD_FIELDS = ('video_id', 'duration', 'feature_shape', 'features', 'tokens', 'span_seconds')


class CorpusValidationError(ValueError):
    """Raised when a sample violates a corpus invariant"""

    def __init__(self, message: str, video_id: Optional[str] = None,
                 line: Optional[int] = None, field_name: Optional[str] = None):
        self.reason = message
        self.video_id = video_id
        self.line = line
        self.field_name = field_name
        location = []
        if line is not None:
            location.append(f"line {line}")
        if video_id is not None:
            location.append(f"sample '{video_id}'")
        if field_name is not None:
            location.append(f"field '{field_name}'")
        prefix = f"{', '.join(location)}: " if location else ''
        super().__init__(f"{prefix}{message}")


class CorpusFormatError(CorpusValidationError):
    """Raised when a corpus file cannot be parsed"""
    pass


def normalize_span(tau_s: float, tau_e: float, tau: float, video_id: Optional[str] = None) -> TemporalSpan:
    """
    Divide span endpoints in seconds by the video duration

    Raises:
        CorpusValidationError: If tau <= 0 or the ordering 0 <= tau_s < tau_e <= tau fails
    """
    if not tau > 0:
        raise CorpusValidationError(f"duration must be positive, got {tau}", video_id, field_name='duration')
    if not 0 <= tau_s < tau_e <= tau:
        raise CorpusValidationError(f"span ({tau_s}, {tau_e}) is not ordered inside [0, {tau}]",
                                    video_id, field_name='span_seconds')
    return TemporalSpan(tau_s / tau, tau_e / tau)


def denormalize_span(span: TemporalSpan, tau: float) -> Tuple[float, float]:
    """Normalised span back to seconds"""
    return span.start * tau, span.end * tau


def pool_clips(frame_features: np.ndarray, clip_count: int) -> np.ndarray:
    """
    Mean-pool [d_v, T] frame features into clip_count chronological clips

    Groups hold floor(T/M) or ceil(T/M) frames, the larger groups first.

    Raises:
        UsageError: If there are fewer frames than clips
    """
    frame_features = np.asarray(frame_features, dtype=np.float64)
    if frame_features.ndim != 2:
        raise UsageError(f"Frame features must be [d_v, T], got {frame_features.shape}")
    frames = frame_features.shape[1]
    if clip_count < 1 or frames < clip_count:
        raise UsageError(f"Cannot pool {frames} frames into {clip_count} clips")
    base, remainder = divmod(frames, clip_count)
    sizes = [base + 1 if i < remainder else base for i in range(clip_count)]
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return np.stack([frame_features[:, bounds[i]:bounds[i + 1]].mean(axis=1)
                     for i in range(clip_count)], axis=1)


@dataclass(frozen=True, eq=False)
class Sample:
    """One (video, sentence, span) query"""
    video_id: str
    duration: float
    clip_features: np.ndarray
    tokens: Tuple[int, ...]
    span_seconds: Tuple[float, float]
    concept: Optional[int] = None

    def __post_init__(self):
        features = np.asarray(self.clip_features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] < 1:
            raise CorpusValidationError(f"clip features must be [d_v, M] with M >= 1, got {features.shape}",
                                        self.video_id, field_name='features')
        if not np.all(np.isfinite(features)):
            raise CorpusValidationError("clip features contain non-finite values",
                                        self.video_id, field_name='features')
        if len(self.tokens) == 0:
            raise CorpusValidationError("sentence has no tokens", self.video_id, field_name='tokens')
        features.setflags(write=False)
        object.__setattr__(self, 'clip_features', features)
        object.__setattr__(self, 'tokens', tuple(int(t) for t in self.tokens))
        object.__setattr__(self, 'span_seconds', (float(self.span_seconds[0]), float(self.span_seconds[1])))
        normalize_span(self.span_seconds[0], self.span_seconds[1], self.duration, self.video_id)

    @property
    def gt_norm(self) -> TemporalSpan:
        return normalize_span(self.span_seconds[0], self.span_seconds[1], self.duration, self.video_id)

    @property
    def clip_count(self) -> int:
        return self.clip_features.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.clip_features.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        return (self.video_id == other.video_id and self.duration == other.duration
                and self.tokens == other.tokens and self.span_seconds == other.span_seconds
                and self.concept == other.concept
                and np.array_equal(self.clip_features, other.clip_features))

    def to_record(self) -> Dict[str, Any]:
        record = {
            'video_id': self.video_id,
            'duration': self.duration,
            'feature_shape': list(self.clip_features.shape),
            'features': self.clip_features.reshape(-1).tolist(),
            'tokens': list(self.tokens),
            'span_seconds': list(self.span_seconds)
        }
        if self.concept is not None:
            record['concept'] = self.concept
        return record

    @classmethod
    def from_record(cls, record: Dict[str, Any], line: Optional[int] = None) -> 'Sample':
        """
        Build a sample from one corpus record

        Raises:
            CorpusFormatError: If a field is missing or has the wrong type
            CorpusValidationError: If the record breaks a sample invariant
        """
        if not isinstance(record, dict):
            raise CorpusFormatError("record is not an object", line=line)
        for name in RECORD_FIELDS:
            if name not in record:
                raise CorpusFormatError("missing field", record.get('video_id'), line, name)
        video_id = record['video_id']
        try:
            shape = tuple(int(v) for v in record['feature_shape'])
            features = np.asarray(record['features'], dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise CorpusFormatError(f"invalid feature data: {e}", video_id, line, 'features')
        if len(shape) != 2 or features.size != shape[0] * shape[1]:
            raise CorpusFormatError(f"{features.size} values do not fill shape {list(shape)}",
                                    video_id, line, 'feature_shape')
        span = record['span_seconds']
        if not isinstance(span, list) or len(span) != 2:
            raise CorpusFormatError("expected [start, end]", video_id, line, 'span_seconds')
        try:
            return cls(
                video_id=str(video_id),
                duration=float(record['duration']),
                clip_features=features.reshape(shape),
                tokens=tuple(record['tokens']),
                span_seconds=(float(span[0]), float(span[1])),
                concept=record.get('concept')
            )
        except CorpusValidationError as e:
            raise CorpusValidationError(e.reason, e.video_id, line, e.field_name) from e
        except (TypeError, ValueError) as e:
            raise CorpusFormatError(str(e), video_id, line)


class Vocabulary:
    """Bijective token <-> id mapping; id 0 is the unknown token"""

    def __init__(self, tokens: Sequence[str] = ()):
        self._tokens: List[str] = [UNKNOWN_TOKEN]
        self._ids: Dict[str, int] = {UNKNOWN_TOKEN: 0}
        for token in tokens:
            self.add(token)

    def add(self, token: str) -> int:
        if token not in self._ids:
            self._ids[token] = len(self._tokens)
            self._tokens.append(token)
        return self._ids[token]

    def encode(self, words: Iterable[str]) -> Tuple[int, ...]:
        return tuple(self._ids.get(word, 0) for word in words)

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self._tokens[i] for i in ids]

    @property
    def tokens(self) -> List[str]:
        return list(self._tokens)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def save(self, path: Path) -> None:
        _atomic_write(path, ''.join(f"{token}\n" for token in self._tokens))

    @classmethod
    def load(cls, path: Path) -> 'Vocabulary':
        lines = Path(path).read_text(encoding='utf-8').splitlines()
        if not lines or lines[0] != UNKNOWN_TOKEN:
            raise CorpusFormatError(f"vocabulary must start with {UNKNOWN_TOKEN}", line=1)
        if len(set(lines)) != len(lines):
            raise CorpusFormatError("vocabulary contains duplicate tokens")
        return cls(lines[1:])


@dataclass
class Corpus:
    """Named splits over one vocabulary; metadata carries generator settings and concept embeddings"""
    splits: Dict[str, List[Sample]]
    vocabulary: Vocabulary
    metadata: Dict[str, Any] = field(default_factory=dict)

    def split(self, name: str) -> List[Sample]:
        if name not in self.splits:
            raise UsageError(f"Corpus has no '{name}' split, available: {sorted(self.splits)}")
        return self.splits[name]

    @property
    def feature_dim(self) -> int:
        for samples in self.splits.values():
            if samples:
                return samples[0].feature_dim
        raise UsageError("Corpus is empty")

    @property
    def clip_count(self) -> int:
        for samples in self.splits.values():
            if samples:
                return samples[0].clip_count
        raise UsageError("Corpus is empty")

    def concept_embeddings(self) -> Optional[np.ndarray]:
        """[C, d_v] planted concept directions, when the corpus was generated"""
        concepts = self.metadata.get('concept_embeddings')
        return None if concepts is None else np.asarray(concepts, dtype=np.float64)

    def validate(self) -> None:
        """
        Check cross-sample invariants: shared feature shape, token ids inside the
        vocabulary and video ids unique across splits
        """
        seen: Dict[str, str] = {}
        shape = None
        for name, samples in self.splits.items():
            for sample in samples:
                if sample.video_id in seen and seen[sample.video_id] != name:
                    raise CorpusValidationError(f"appears in splits '{seen[sample.video_id]}' and '{name}'",
                                                sample.video_id, field_name='video_id')
                seen[sample.video_id] = name
                if shape is None:
                    shape = sample.clip_features.shape
                elif sample.clip_features.shape != shape:
                    raise CorpusValidationError(f"feature shape {sample.clip_features.shape} differs from {shape}",
                                                sample.video_id, field_name='feature_shape')
                if max(sample.tokens) >= len(self.vocabulary) or min(sample.tokens) < 0:
                    raise CorpusValidationError(f"token id outside vocabulary of {len(self.vocabulary)}",
                                                sample.video_id, field_name='tokens')


def _atomic_write(path: Path, content: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_path = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8') as f:
            f.write(content)
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.unlink(temp_path)
        raise


def save_corpus(corpus: Corpus, path: Path) -> Dict[str, Path]:
    """
    Write every split as {split}.jsonl plus the vocabulary and metadata files

    Each split file starts with a header record carrying the sample count. Files
    are written to a temporary name and renamed into place.

    Returns:
        Mapping of artifact name to the written path
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    written = {}
    for name, samples in corpus.splits.items():
        header = {'format': CORPUS_FORMAT, 'version': CORPUS_VERSION, 'split': name, 'count': len(samples)}
        lines = [json.dumps(header)] + [json.dumps(sample.to_record()) for sample in samples]
        split_path = path / f"{name}.jsonl"
        _atomic_write(split_path, '\n'.join(lines) + '\n')
        written[name] = split_path
    corpus.vocabulary.save(path / VOCABULARY_FILE)
    written['vocabulary'] = path / VOCABULARY_FILE
    _atomic_write(path / METADATA_FILE, json.dumps(corpus.metadata, sort_keys=True))
    written['metadata'] = path / METADATA_FILE
    logger.info(f"Saved corpus to {path}: " + ', '.join(f"{n}={len(s)}" for n, s in corpus.splits.items()))
    return written


def load_split(path: Path) -> List[Sample]:
    """
    Parse one split file, validating every record

    Raises:
        CorpusFormatError: On unparseable lines or a count that disagrees with the header
        CorpusValidationError: On a record that breaks a sample invariant
    """
    samples = []
    expected_count = None
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(f"invalid JSON in {Path(path).name}: {e.msg}", line=line_number)
            if line_number == 1 and isinstance(record, dict) and 'format' in record:
                if record['format'] != CORPUS_FORMAT or record.get('version') != CORPUS_VERSION:
                    raise CorpusFormatError(f"unsupported format {record.get('format')} "
                                            f"version {record.get('version')}", line=1, field_name='format')
                expected_count = record.get('count')
                continue
            samples.append(Sample.from_record(record, line=line_number))
    if expected_count is not None and expected_count != len(samples):
        raise CorpusFormatError(f"{Path(path).name} declares {expected_count} records but holds {len(samples)}",
                                field_name='count')
    return samples


def load_corpus(path: Path, splits: Sequence[str] = SPLITS) -> Corpus:
    """
    Load a corpus directory written by save_corpus

    Raises:
        FileNotFoundError: If the directory or its vocabulary is missing
        CorpusFormatError / CorpusValidationError: On any malformed record
    """
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"Corpus directory not found: {path}")
    vocabulary = Vocabulary.load(path / VOCABULARY_FILE)
    loaded = {}
    for name in splits:
        split_path = path / f"{name}.jsonl"
        if split_path.exists():
            loaded[name] = load_split(split_path)
    metadata = {}
    if (path / METADATA_FILE).exists():
        metadata = json.loads((path / METADATA_FILE).read_text(encoding='utf-8'))
    corpus = Corpus(splits=loaded, vocabulary=vocabulary, metadata=metadata)
    corpus.validate()
    logger.info(f"Loaded corpus from {path}: " + ', '.join(f"{n}={len(s)}" for n, s in loaded.items()))
    return corpus
