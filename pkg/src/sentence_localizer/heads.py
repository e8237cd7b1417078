"""
Heads module: coordinate regression from attention and span post-processing
"""

import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from sentence_localizer.autodiff import Node, ShapeError, Tape, UsageError

ALIGNMENT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class TemporalSpan:
    """Normalised (start, end) with 0 <= start < end <= 1 once sanitised"""
    start: float
    end: float

    @property
    def is_valid(self) -> bool:
        return 0.0 <= self.start < self.end <= 1.0

    @property
    def length(self) -> float:
        return self.end - self.start

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start + self.end)

    def as_tuple(self) -> Tuple[float, float]:
        return (self.start, self.end)


@dataclass
class AwHeadParams:
    """Two fully connected layers over the video attention: [d_r, M] then [2, d_r]"""
    W1: Node
    b1: Node
    W2: Node
    b2: Node

    @classmethod
    def from_nodes(cls, nodes: Dict[str, Node]) -> 'AwHeadParams':
        return cls(W1=nodes['aw.W1'], b1=nodes['aw.b1'], W2=nodes['aw.W2'], b2=nodes['aw.b2'])


@dataclass
class AfHeadParams:
    """Fusion W_f [h, 2h] followed by two fully connected layers [d_r, h] and [2, d_r]"""
    W_f: Node
    b_f: Node
    W1: Node
    b1: Node
    W2: Node
    b2: Node

    @classmethod
    def from_nodes(cls, nodes: Dict[str, Node]) -> 'AfHeadParams':
        return cls(W_f=nodes['af.W_f'], b_f=nodes['af.b_f'], W1=nodes['af.W1'],
                   b1=nodes['af.b1'], W2=nodes['af.W2'], b2=nodes['af.b2'])


def aw_head_parameter_shapes(clip_count: int, regression_size: int) -> Dict[str, Tuple[int, ...]]:
    return {
        'aw.W1': (regression_size, clip_count),
        'aw.b1': (regression_size,),
        'aw.W2': (2, regression_size),
        'aw.b2': (2,)
    }


def af_head_parameter_shapes(hidden_size: int, regression_size: int) -> Dict[str, Tuple[int, ...]]:
    return {
        'af.W_f': (hidden_size, 2 * hidden_size),
        'af.b_f': (hidden_size,),
        'af.W1': (regression_size, hidden_size),
        'af.b1': (regression_size,),
        'af.W2': (2, regression_size),
        'af.b2': (2,)
    }


def _two_layer_regression(tape: Tape, inputs: Node, W1: Node, b1: Node, W2: Node, b2: Node) -> Node:
    hidden = tape.relu(tape.add(tape.matmul(W1, inputs), b1))
    return tape.relu(tape.add(tape.matmul(W2, hidden), b2))


def regress_aw(tape: Tape, a_v: Node, params: AwHeadParams) -> Node:
    """
    Regress raw (t_s, t_e) from the video attention weights alone

    Args:
        a_v: Attention weights [B, M]

    Returns:
        Raw coordinates [B, 2, 1], nonnegative
    """
    if a_v.shape[-1] != params.W1.shape[1]:
        raise ShapeError(f"regress_aw {a_v.label}", f"{params.W1.shape[1]} clips", str(a_v.shape))
    hidden = tape.relu(tape.add(tape.weighted_sum(params.W1, a_v), params.b1))
    return tape.relu(tape.add(tape.matmul(params.W2, hidden), params.b2))


def regress_af(tape: Tape, v_tilde: Node, s_tilde: Node, params: AfHeadParams) -> Node:
    """
    Regress raw (t_s, t_e) from the fused attended video and sentence features

    Args:
        v_tilde: Attended video feature [B, h, 1]
        s_tilde: Attended sentence feature [B, h, 1]

    Returns:
        Raw coordinates [B, 2, 1], nonnegative
    """
    width = params.W_f.shape[1]
    if v_tilde.shape != s_tilde.shape or v_tilde.shape[-2] + s_tilde.shape[-2] != width:
        raise ShapeError("regress_af", f"two [B, {width // 2}, 1] features", f"{v_tilde.shape}, {s_tilde.shape}")
    fused = tape.relu(tape.add(tape.matmul(params.W_f, tape.concat([v_tilde, s_tilde], axis=-2)), params.b_f))
    return _two_layer_regression(tape, fused, params.W1, params.b1, params.W2, params.b2)


def _snap(value: float) -> float:
    nearest = round(value)
    return float(nearest) if abs(value - nearest) < ALIGNMENT_TOLERANCE else value


def sanitize_span(raw: Tuple[float, float], clip_count: int) -> TemporalSpan:
    """
    Clamp a raw regression output into a valid span

    Both values are clamped to [0, 1]; an empty or inverted span is widened to
    one clip to the right, or to the left when it sits at the end of the video.
    """
    start = min(max(float(raw[0]), 0.0), 1.0)
    end = min(max(float(raw[1]), 0.0), 1.0)
    if end <= start:
        end = min(1.0, start + 1.0 / clip_count)
        if end <= start:
            start = max(0.0, end - 1.0 / clip_count)
    return TemporalSpan(start, end)


def clip_bounds(span: TemporalSpan, clip_count: int) -> Tuple[int, int]:
    """Indices [first, last) of the clips a span touches, covering at least one clip"""
    first = int(math.floor(_snap(span.start * clip_count)))
    last = int(math.ceil(_snap(span.end * clip_count)))
    first = min(max(first, 0), clip_count - 1)
    last = min(max(last, first + 1), clip_count)
    return first, last


def trim_to_clips(span: TemporalSpan, clip_count: int) -> TemporalSpan:
    """Round start down and end up to clip boundaries"""
    first, last = clip_bounds(span, clip_count)
    return TemporalSpan(first / clip_count, last / clip_count)


def localize_by_attention_postprocess(a_v: np.ndarray, threshold_fraction: float = 0.5) -> TemporalSpan:
    """
    Span from attention alone: keep clips weighted at least threshold_fraction
    of the peak and return the contiguous run around the peak

    Raises:
        UsageError: If threshold_fraction is outside (0, 1]
    """
    if not 0.0 < threshold_fraction <= 1.0:
        raise UsageError(f"threshold_fraction must lie in (0, 1], got {threshold_fraction}")
    a_v = np.asarray(a_v, dtype=np.float64).reshape(-1)
    peak = int(np.argmax(a_v))
    keep = a_v >= threshold_fraction * a_v[peak]
    first = peak
    while first > 0 and keep[first - 1]:
        first -= 1
    last = peak + 1
    while last < a_v.size and keep[last]:
        last += 1
    return TemporalSpan(first / a_v.size, last / a_v.size)
