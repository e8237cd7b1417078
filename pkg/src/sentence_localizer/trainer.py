"""
Trainer module: mini-batch training, best-validation selection and prediction
"""

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from sentence_localizer.autodiff import PRECISIONS, Tape, UsageError
from sentence_localizer.checkpoint import Checkpoint
from sentence_localizer.config_loader import TrainConfig, Variant
from sentence_localizer.corpus import Corpus, Sample, Vocabulary
from sentence_localizer.heads import (
    TemporalSpan, localize_by_attention_postprocess, sanitize_span, trim_to_clips
)
from sentence_localizer.losses import LossBreakdown, clip_mask, span_targets, total_loss
from sentence_localizer.metrics import CURVE_SIGMAS, DEFAULT_SIGMAS, EvalReport, evaluate
from sentence_localizer.model import LocalizerModel, ModelDims
from sentence_localizer.optimizer import Adam, clip_gradients

logger = logging.getLogger(__name__)

EPOCH_LOG = 'epochs.jsonl'


class TrainingDivergenceError(RuntimeError):
    """Raised when the loss or its gradients stop being finite"""

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"Training diverged at epoch {epoch}, batch {batch}: loss {loss}")


@dataclass
class Prediction:
    """Clip-aligned span plus the attention trace behind it"""
    span: TemporalSpan
    raw: Optional[List[float]]
    a_v: np.ndarray
    a_v1: np.ndarray
    a_s: Optional[np.ndarray]


@dataclass
class TrainingResult:
    checkpoint: Checkpoint
    history: List[Dict[str, Any]] = field(default_factory=list)
    best_epoch: int = 0
    best_miou: Optional[float] = None


def length_buckets(samples: Sequence[Sample], batch_size: int,
                   rng: Optional[np.random.Generator] = None) -> List[List[int]]:
    """
    Batches of sample indices sharing one sentence length

    With rng the order inside each length group and the batch order are
    shuffled; without it batches follow length then corpus order.
    """
    groups: Dict[int, List[int]] = {}
    for index, sample in enumerate(samples):
        groups.setdefault(len(sample.tokens), []).append(index)
    batches = []
    for length in sorted(groups):
        indices = np.asarray(groups[length])
        if rng is not None:
            indices = rng.permutation(indices)
        batches.extend(indices[i:i + batch_size].tolist() for i in range(0, len(indices), batch_size))
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def make_batch(samples: Sequence[Sample], with_targets: bool = True) -> Dict[str, np.ndarray]:
    """Stack samples of one sentence length into graph inputs"""
    if len({len(s.tokens) for s in samples}) != 1:
        raise UsageError("A batch must hold sentences of one length")
    inputs = {
        'clips': np.stack([s.clip_features for s in samples]),
        'tokens': np.asarray([s.tokens for s in samples], dtype=np.int64)
    }
    if with_targets:
        inputs['targets'] = span_targets([s.gt_norm for s in samples])
        inputs['masks'] = np.stack([clip_mask(s.gt_norm, s.clip_count) for s in samples])
    return inputs


def model_dims(corpus: Corpus) -> ModelDims:
    return ModelDims(vocab_size=len(corpus.vocabulary), feature_dim=corpus.feature_dim,
                     clip_count=corpus.clip_count)


class Localizer:
    """Inference over frozen parameters; dropout off, nothing recorded"""

    def __init__(self, model: LocalizerModel, parameters: Dict[str, np.ndarray]):
        model.validate_params(parameters)
        self.model = model
        self.parameters = parameters
        self.dtype = PRECISIONS[model.config.precision]

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint, variant: Optional[Variant] = None) -> 'Localizer':
        """
        Raises:
            CheckpointError: If variant is given and differs from the checkpoint's
        """
        if variant is not None:
            checkpoint.require_variant(variant)
        return cls(LocalizerModel(checkpoint.config, checkpoint.dims), checkpoint.parameters)

    @property
    def variant(self) -> Variant:
        return self.model.variant

    def predict_batch(self, samples: Sequence[Sample]) -> List[Prediction]:
        """
        Localize samples sharing one sentence length

        Raises:
            ShapeError: If a sample does not fit the model dimensions
        """
        inputs = make_batch(samples, with_targets=False)
        tape = Tape(dtype=self.dtype, record=False)
        nodes = {name: tape.parameter(name, value) for name, value in self.parameters.items()}
        output = self.model.forward(tape, nodes, inputs['clips'], inputs['tokens'])
        clip_count = self.model.dims.clip_count
        attention = output.attention

        predictions = []
        for i in range(len(samples)):
            a_v = np.asarray(attention.a_v.value[i], dtype=np.float64)
            if output.raw is None:
                span = localize_by_attention_postprocess(a_v, self.model.config.ablp_threshold)
                raw = None
            else:
                raw = [float(v) for v in output.raw.value[i].reshape(-1)]
                span = sanitize_span((raw[0], raw[1]), clip_count)
            predictions.append(Prediction(
                span=trim_to_clips(span, clip_count),
                raw=raw,
                a_v=a_v,
                a_v1=np.asarray(attention.a_v1.value[i], dtype=np.float64),
                a_s=None if attention.a_s is None else np.asarray(attention.a_s.value[i], dtype=np.float64)
            ))
        return predictions

    def predict(self, sample: Sample) -> Prediction:
        return self.predict_batch([sample])[0]

    def predict_all(self, samples: Sequence[Sample], batch_size: int = 64) -> List[Prediction]:
        """Predictions in the order of samples"""
        predictions: List[Optional[Prediction]] = [None] * len(samples)
        for batch in length_buckets(samples, batch_size):
            for index, prediction in zip(batch, self.predict_batch([samples[i] for i in batch])):
                predictions[index] = prediction
        return predictions

    def evaluate(self, samples: Sequence[Sample], sigmas: Sequence[float] = DEFAULT_SIGMAS,
                 curve_sigmas: Sequence[float] = CURVE_SIGMAS) -> EvalReport:
        """
        Raises:
            UsageError: If samples is empty
        """
        if not samples:
            raise UsageError("Cannot evaluate an empty split")
        predictions = self.predict_all(samples)
        return evaluate(
            [p.span for p in predictions], [s.gt_norm for s in samples], sigmas,
            video_ids=[s.video_id for s in samples],
            attentions=[p.a_v for p in predictions],
            curve_sigmas=curve_sigmas
        )


def predict(checkpoint: Checkpoint, sample: Sample) -> Prediction:
    """Localize one sample with a checkpoint"""
    return Localizer.from_checkpoint(checkpoint).predict(sample)


def inspect_sample(localizer: Localizer, sample: Sample, vocabulary: Vocabulary, top_k: int = 3) -> Dict[str, Any]:
    """Predicted and true span, the video attention profile and the most attended words"""
    prediction = localizer.predict(sample)
    words = vocabulary.decode(sample.tokens)
    record = {
        'video_id': sample.video_id,
        'sentence': ' '.join(words),
        'pred': list(prediction.span.as_tuple()),
        'gt': list(sample.gt_norm.as_tuple()),
        'video_attention': [round(float(w), 6) for w in prediction.a_v],
        'top_words': []
    }
    if prediction.a_s is not None:
        order = np.argsort(-prediction.a_s, kind='stable')[:top_k]
        record['top_words'] = [{'word': words[i], 'weight': float(prediction.a_s[i])} for i in order]
    return record


def _write_epoch(out_dir: Optional[Path], record: Dict[str, Any]) -> None:
    if out_dir is None:
        return
    with open(Path(out_dir) / EPOCH_LOG, 'a', encoding='utf-8') as f:
        f.write(json.dumps(record) + '\n')


def train(corpus: Corpus, config: TrainConfig, out_dir: Optional[Path] = None,
          progress: bool = True, sigmas: Sequence[float] = DEFAULT_SIGMAS) -> TrainingResult:
    """
    Train a variant end to end and keep the parameters of the best validation epoch

    Each epoch shuffles length buckets, runs forward and backward per batch on
    alpha * l_reg + beta * l_cal (batch means), clips the global gradient norm
    and takes an Adam step. Without a validation split the last epoch is kept.

    Raises:
        UsageError: If the train split is empty
        TrainingDivergenceError: If a loss or gradient becomes non-finite
    """
    train_samples = corpus.split('train')
    if not train_samples:
        raise UsageError("Training requires a nonempty train split")
    val_samples = corpus.splits.get('val', [])

    model = LocalizerModel(config, model_dims(corpus))
    init_seed, shuffle_seed, dropout_seed = np.random.SeedSequence(config.seed).spawn(3)
    params = model.init_params(np.random.default_rng(init_seed))
    shuffle_rng = np.random.default_rng(shuffle_seed)
    dropout_rng = np.random.default_rng(dropout_seed)
    optimizer = Adam(learning_rate=config.learning_rate)

    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / EPOCH_LOG).write_text('', encoding='utf-8')

    logger.info(f"Training {config.variant.value}: {model.parameter_count} parameters, "
                f"{len(train_samples)} train / {len(val_samples)} val samples, alpha={config.alpha}, "
                f"beta={config.beta}, lr={config.learning_rate}, grad_clip={config.grad_clip}")

    history: List[Dict[str, Any]] = []
    best_params = {name: value.copy() for name, value in params.items()}
    best_epoch, best_miou = 0, None

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        batches = length_buckets(train_samples, config.batch_size, shuffle_rng)
        reg_sum = cal_sum = norm_sum = 0.0
        seen = 0

        bar = tqdm(batches, desc=f"epoch {epoch}/{config.epochs}", disable=not progress, leave=False)
        for batch_index, batch in enumerate(bar, start=1):
            inputs = make_batch([train_samples[i] for i in batch])
            graph = model.build_graph(params, training=True, seed=int(dropout_rng.integers(2 ** 31)))
            outputs = graph.forward(inputs)
            loss = float(outputs['loss'])
            if not np.isfinite(loss):
                raise TrainingDivergenceError(epoch, batch_index, loss)
            grads = graph.backward('loss')
            norm = clip_gradients(grads, config.grad_clip)
            if not np.isfinite(norm):
                raise TrainingDivergenceError(epoch, batch_index, loss)
            optimizer.step(params, grads)

            reg_sum += float(outputs['l_reg']) * len(batch)
            cal_sum += float(outputs['l_cal']) * len(batch)
            norm_sum += norm
            seen += len(batch)
            bar.set_postfix(loss=f"{loss:.4f}")

        breakdown: LossBreakdown = total_loss(reg_sum / seen, cal_sum / seen, config.alpha, config.beta)
        record = {'epoch': epoch, **breakdown.to_dict(), 'grad_norm': norm_sum / len(batches)}

        if val_samples:
            report = Localizer(model, params).evaluate(val_samples, sigmas, curve_sigmas=())
            record.update({f"val_{key}": value for key, value in report.summary().items()})
            if best_miou is None or report.miou > best_miou:
                best_miou, best_epoch = report.miou, epoch
                best_params = {name: value.copy() for name, value in params.items()}
        else:
            best_epoch = epoch
            best_params = {name: value.copy() for name, value in params.items()}

        record['seconds'] = time.perf_counter() - started
        history.append(record)
        _write_epoch(out_dir, record)
        val_text = f", val mIoU {record['val_mIoU']:.4f}" if 'val_mIoU' in record else ''
        logger.info(f"Epoch {epoch}: loss {breakdown.total:.4f} (reg {breakdown.l_reg:.4f}, "
                    f"cal {breakdown.l_cal:.4f}){val_text}")

    checkpoint = Checkpoint(parameters=best_params, config=config, dims=model.dims,
                            epoch=best_epoch, history=history)
    logger.info(f"Selected epoch {best_epoch}" + (f" with val mIoU {best_miou:.4f}" if best_miou is not None else ''))
    return TrainingResult(checkpoint=checkpoint, history=history, best_epoch=best_epoch, best_miou=best_miou)
