"""
Metrics module: temporal IoU, R@1 at IoU thresholds, mIoU and attention mass
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from sentence_localizer.autodiff import UsageError
from sentence_localizer.heads import TemporalSpan
from sentence_localizer.losses import clip_mask

logger = logging.getLogger(__name__)

DEFAULT_SIGMAS = (0.1, 0.3, 0.5)
CURVE_SIGMAS = tuple(round(0.05 * i, 2) for i in range(1, 20))


def iou(a: TemporalSpan, b: TemporalSpan) -> float:
    """Intersection over union of two spans; 0 when disjoint"""
    intersection = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    union = max(a.end, b.end) - min(a.start, b.start)
    return intersection / union if union > 0 else 0.0


def recall_at(ious: Sequence[float], sigma: float) -> float:
    """Fraction of queries with IoU strictly above sigma"""
    return float(np.mean(np.asarray(ious) > sigma))


def recall_curve(preds: Sequence[TemporalSpan], gts: Sequence[TemporalSpan],
                 sigmas: Sequence[float] = CURVE_SIGMAS) -> Dict[float, float]:
    """R@1 over a dense grid of IoU thresholds"""
    ious = [iou(p, g) for p, g in zip(preds, gts)]
    return {float(sigma): recall_at(ious, sigma) for sigma in sigmas}


def attention_mass_in_window(a_v: np.ndarray, gt: TemporalSpan, clip_count: Optional[int] = None) -> float:
    """Video attention mass on the clips whose midpoint lies inside gt"""
    a_v = np.asarray(a_v, dtype=np.float64).reshape(-1)
    mask = clip_mask(gt, clip_count or a_v.size)
    return float(np.sum(a_v * mask))


@dataclass
class EvalReport:
    """Recall at each threshold, mIoU and the per-sample records behind them"""
    recall_at: Dict[float, float]
    miou: float
    sample_count: int
    records: List[Dict[str, Any]] = field(default_factory=list)
    curve: Dict[float, float] = field(default_factory=dict)
    attention_mass: Optional[float] = None
    window_fraction: Optional[float] = None

    def summary(self) -> Dict[str, Any]:
        summary = {f"R@1,IoU@{sigma:g}": value for sigma, value in self.recall_at.items()}
        summary['mIoU'] = self.miou
        summary['samples'] = self.sample_count
        if self.attention_mass is not None:
            summary['attention_mass'] = self.attention_mass
            summary['window_fraction'] = self.window_fraction
        return summary

    def to_records(self) -> List[Dict[str, Any]]:
        """Line-delimited form: one summary record then one record per sample"""
        head = {'record': 'summary', **self.summary()}
        if self.curve:
            head['curve'] = {f"{sigma:g}": value for sigma, value in self.curve.items()}
        return [head] + [{'record': 'sample', **record} for record in self.records]

    def format_table(self) -> str:
        frame = pd.DataFrame([self.summary()])
        return frame.to_string(index=False, float_format=lambda value: f"{value:.4f}")


def evaluate(preds: Sequence[TemporalSpan], gts: Sequence[TemporalSpan],
             sigmas: Sequence[float] = DEFAULT_SIGMAS,
             video_ids: Optional[Sequence[str]] = None,
             attentions: Optional[Sequence[np.ndarray]] = None,
             curve_sigmas: Sequence[float] = CURVE_SIGMAS) -> EvalReport:
    """
    Score predicted spans against ground truth

    Args:
        preds: Predicted spans
        gts: Ground-truth spans, same order
        sigmas: Thresholds of the headline recall columns
        video_ids: Optional identifiers copied into the per-sample records
        attentions: Optional final video attention per sample for the mass statistic

    Raises:
        UsageError: If the lists are empty or differ in length
    """
    if len(preds) != len(gts):
        raise UsageError(f"Got {len(preds)} predictions for {len(gts)} ground-truth spans")
    if not preds:
        raise UsageError("Cannot evaluate an empty prediction list")

    ious = [iou(p, g) for p, g in zip(preds, gts)]
    records = []
    for i, (pred, gt, value) in enumerate(zip(preds, gts, ious)):
        record = {'pred': list(pred.as_tuple()), 'gt': list(gt.as_tuple()), 'iou': value}
        if video_ids is not None:
            record['video_id'] = video_ids[i]
        records.append(record)

    report = EvalReport(
        recall_at={float(sigma): recall_at(ious, sigma) for sigma in sorted(sigmas)},
        miou=float(np.mean(ious)),
        sample_count=len(ious),
        records=records,
        curve={float(sigma): recall_at(ious, sigma) for sigma in curve_sigmas}
    )
    if attentions is not None:
        masses = [attention_mass_in_window(a, g) for a, g in zip(attentions, gts)]
        fractions = [float(clip_mask(g, np.size(a)).mean()) for a, g in zip(attentions, gts)]
        for record, mass in zip(records, masses):
            record['attention_mass'] = mass
        report.attention_mass = float(np.mean(masses))
        report.window_fraction = float(np.mean(fractions))
    logger.info(f"Evaluated {report.sample_count} samples: mIoU {report.miou:.4f}, " + ', '.join(
        f"R@1,IoU@{sigma:g} {value:.4f}" for sigma, value in report.recall_at.items()))
    return report
