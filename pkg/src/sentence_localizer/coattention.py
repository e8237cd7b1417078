"""
Coattention module: guided attention and the video -> sentence -> video alternation
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from sentence_localizer.autodiff import Node, ShapeError, Tape
from sentence_localizer.encoders import EncodedSequence

ATTENTION_STEPS = ('attn1', 'attn2', 'attn3')


@dataclass
class AttentionParams:
    """U_z [k, h], U_g [k, h], b_a [k], u_a [k]"""
    U_z: Node
    U_g: Node
    b_a: Node
    u_a: Node

    @classmethod
    def from_nodes(cls, nodes: Dict[str, Node], prefix: str) -> 'AttentionParams':
        return cls(
            U_z=nodes[f"{prefix}.U_z"],
            U_g=nodes[f"{prefix}.U_g"],
            b_a=nodes[f"{prefix}.b_a"],
            u_a=nodes[f"{prefix}.u_a"]
        )


@dataclass
class CoAttentionParams:
    """Independent parameters for each of the three attention steps"""
    step1: AttentionParams
    step2: Optional[AttentionParams] = None
    step3: Optional[AttentionParams] = None

    @classmethod
    def from_nodes(cls, nodes: Dict[str, Node], single_step: bool = False) -> 'CoAttentionParams':
        if single_step:
            return cls(step1=AttentionParams.from_nodes(nodes, 'attn1'))
        return cls(*(AttentionParams.from_nodes(nodes, prefix) for prefix in ATTENTION_STEPS))


@dataclass
class CoAttentionOutput:
    """
    Attention trace. Weights are [B, L] simplex rows, attended features [B, h, 1].
    The single-vector sentence variant leaves a_s empty and s_tilde is the sentence mean.
    """
    a_v1: Node
    v_tilde1: Node
    a_s: Optional[Node]
    s_tilde: Node
    a_v: Node
    v_tilde: Node


def attention_parameter_shapes(prefix: str, hidden_size: int, attention_size: int) -> Dict[str, Tuple[int, ...]]:
    return {
        f"{prefix}.U_z": (attention_size, hidden_size),
        f"{prefix}.U_g": (attention_size, hidden_size),
        f"{prefix}.b_a": (attention_size,),
        f"{prefix}.u_a": (attention_size,)
    }


def attend(tape: Tape, sequence: EncodedSequence, guidance: Node, params: AttentionParams) -> Tuple[Node, Node]:
    """
    Guided attention over the columns of a sequence

    H = tanh(U_z Z + (U_g g) 1^T + b_a 1^T), weights = softmax(u_a^T H),
    attended = sum_j weights_j z_j

    Args:
        tape: Recording tape
        sequence: Z as [B, h, L]
        guidance: g as [B, h, 1]
        params: Attention parameters of this step

    Returns:
        (weights [B, L], attended [B, h, 1])

    Raises:
        ShapeError: If g does not match U_g or Z does not match U_z
    """
    features = sequence.features
    if guidance.shape[-2] != params.U_g.shape[1]:
        raise ShapeError(f"attend guidance {guidance.label}", f"{params.U_g.shape[1]} rows", str(guidance.shape))
    if features.shape[-2] != params.U_z.shape[1]:
        raise ShapeError(f"attend sequence {features.label}", f"{params.U_z.shape[1]} rows", str(features.shape))

    hidden = tape.tanh(tape.add(
        tape.add(tape.matmul(params.U_z, features), tape.matmul(params.U_g, guidance)),
        params.b_a
    ))
    scores = tape.matmul(params.u_a, hidden)
    weights = tape.softmax(scores, axis=-1)
    attended = tape.weighted_sum(features, weights)
    return weights, attended


def co_attention(tape: Tape, video: EncodedSequence, sentence: EncodedSequence,
                 params: CoAttentionParams) -> CoAttentionOutput:
    """
    Three-step alternation: video guided by the mean word feature, sentence
    guided by the attended video, then video guided by the attended sentence
    """
    sentence_mean = tape.mean(sentence.features, axis=-1)
    a_v1, v_tilde1 = attend(tape, video, sentence_mean, params.step1)
    a_s, s_tilde = attend(tape, sentence, v_tilde1, params.step2)
    a_v, v_tilde = attend(tape, video, s_tilde, params.step3)
    return CoAttentionOutput(a_v1=a_v1, v_tilde1=v_tilde1, a_s=a_s, s_tilde=s_tilde, a_v=a_v, v_tilde=v_tilde)


def single_vector_attention(tape: Tape, video: EncodedSequence, sentence: EncodedSequence,
                            params: CoAttentionParams) -> CoAttentionOutput:
    """Sentence collapsed to its mean feature; the video is attended once"""
    sentence_mean = tape.mean(sentence.features, axis=-1)
    a_v, v_tilde = attend(tape, video, sentence_mean, params.step1)
    return CoAttentionOutput(a_v1=a_v, v_tilde1=v_tilde, a_s=None, s_tilde=sentence_mean, a_v=a_v, v_tilde=v_tilde)
