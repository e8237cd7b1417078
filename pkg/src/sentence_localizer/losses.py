"""
Losses module: smooth L1 coordinate regression, attention calibration and the weighted total
"""

import math
from dataclasses import asdict, dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from sentence_localizer.autodiff import Node, Tape, UsageError
from sentence_localizer.heads import TemporalSpan


@dataclass(frozen=True)
class LossBreakdown:
    """Both loss terms, their weights and the weighted total"""
    l_reg: float
    l_cal: float
    total: float
    alpha: float
    beta: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def clip_mask(gt: TemporalSpan, clip_count: int) -> np.ndarray:
    """
    Binary mask of the clips inside a ground-truth span

    A clip belongs to the span when its midpoint lies in [start, end]. When no
    midpoint qualifies, the single clip holding the span midpoint is set.
    """
    if clip_count < 1:
        raise UsageError(f"clip_count must be positive, got {clip_count}")
    midpoints = (np.arange(clip_count) + 0.5) / clip_count
    mask = ((midpoints >= gt.start) & (midpoints <= gt.end)).astype(np.float64)
    if not mask.any():
        index = math.ceil(gt.midpoint * clip_count) - 1
        mask[max(0, min(clip_count - 1, index))] = 1.0
    return mask


def span_targets(spans: Sequence[TemporalSpan]) -> np.ndarray:
    """Ground-truth coordinates as a [B, 2, 1] batch"""
    return np.array([[[span.start], [span.end]] for span in spans], dtype=np.float64)


def regression_loss_node(tape: Tape, raw: Node, targets: Node) -> Node:
    """Sum of smooth L1 residuals over both coordinates and every sample"""
    if raw.shape != targets.shape:
        raise UsageError(f"Prediction shape {raw.shape} does not match targets {targets.shape}")
    return tape.sum(tape.smooth_l1(tape.sub(targets, raw)))


def calibration_loss_node(tape: Tape, a_v: Node, masks: np.ndarray) -> Node:
    """
    Sum over samples of -(sum_j m_j log a_j) / (sum_j m_j)

    Args:
        a_v: Video attention weights [B, M]
        masks: Binary clip masks [B, M]

    Raises:
        UsageError: If a mask is empty or the shapes disagree
    """
    masks = np.asarray(masks, dtype=np.float64)
    if masks.shape != a_v.shape:
        raise UsageError(f"Mask shape {masks.shape} does not match attention {a_v.shape}")
    counts = masks.sum(axis=-1, keepdims=True)
    if np.any(counts == 0):
        raise UsageError("Calibration mask has no clip inside the ground-truth window")
    normalised = tape.constant(-masks / counts)
    return tape.sum(tape.mul(normalised, tape.log(a_v)))


def regression_loss(predictions: Sequence[Tuple[float, float]], targets: Sequence[TemporalSpan]) -> float:
    """
    Smooth L1 regression loss summed over a list of raw predictions

    Raises:
        UsageError: If the lists are empty or differ in length
    """
    if len(predictions) != len(targets):
        raise UsageError(f"Got {len(predictions)} predictions for {len(targets)} targets")
    if not predictions:
        raise UsageError("regression_loss requires at least one pair")
    tape = Tape(record=False)
    raw = tape.constant(np.asarray(predictions, dtype=np.float64).reshape(-1, 2, 1))
    return float(regression_loss_node(tape, raw, tape.constant(span_targets(targets))).value)


def calibration_loss(attentions: Sequence[np.ndarray], masks: Sequence[np.ndarray]) -> float:
    """
    Attention calibration loss summed over a list of attention vectors

    Raises:
        UsageError: If the lists differ in length or a mask is empty
    """
    if len(attentions) != len(masks):
        raise UsageError(f"Got {len(attentions)} attention vectors for {len(masks)} masks")
    if not attentions:
        raise UsageError("calibration_loss requires at least one attention vector")
    total = 0.0
    for attention, mask in zip(attentions, masks):
        tape = Tape(record=False)
        a_v = tape.constant(np.asarray(attention, dtype=np.float64)[None, :])
        total += float(calibration_loss_node(tape, a_v, np.asarray(mask)[None, :]).value)
    return total


def total_loss(l_reg: float, l_cal: float, alpha: float, beta: float) -> LossBreakdown:
    """
    Combine the two terms as alpha * l_reg + beta * l_cal

    Raises:
        UsageError: If a weight is negative
    """
    if alpha < 0 or beta < 0:
        raise UsageError(f"Loss weights must be nonnegative, got alpha={alpha}, beta={beta}")
    return LossBreakdown(l_reg=l_reg, l_cal=l_cal, total=alpha * l_reg + beta * l_cal,
                         alpha=alpha, beta=beta)
