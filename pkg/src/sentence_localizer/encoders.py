"""
Encoders module: bidirectional LSTM encoding of clip and word sequences

Sequences are [B, d, L] with timesteps as columns. Each direction runs a
standard LSTM cell from zero states; the two hidden streams are concatenated
per timestep and projected through a ReLU layer to width h.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from sentence_localizer.autodiff import GraphUsageError, Node, ShapeError, Tape

logger = logging.getLogger(__name__)

GATES = ('i', 'f', 'o', 'g')


@dataclass
class LstmParams:
    """Gate weights [h, d_in + h] and biases [h] for the input, forget, output gates and candidate"""
    W_i: Node
    W_f: Node
    W_o: Node
    W_g: Node
    b_i: Node
    b_f: Node
    b_o: Node
    b_g: Node

    @classmethod
    def from_nodes(cls, nodes: Dict[str, Node], prefix: str) -> 'LstmParams':
        kwargs = {}
        for gate in GATES:
            kwargs[f"W_{gate}"] = nodes[f"{prefix}.W_{gate}"]
            kwargs[f"b_{gate}"] = nodes[f"{prefix}.b_{gate}"]
        return cls(**kwargs)

    @property
    def hidden_size(self) -> int:
        return self.W_i.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_i.shape[1] - self.W_i.shape[0]

    def validate(self) -> None:
        expected = self.W_i.shape
        for gate in GATES:
            weight = getattr(self, f"W_{gate}")
            bias = getattr(self, f"b_{gate}")
            if weight.shape != expected:
                raise ShapeError(weight.label, str(expected), str(weight.shape))
            if bias.shape != (expected[0],):
                raise ShapeError(bias.label, str((expected[0],)), str(bias.shape))


@dataclass
class BiEncoderParams:
    """Forward and backward LSTMs plus the ReLU projection W [h, 2h], b [h]"""
    forward: LstmParams
    backward: LstmParams
    W_proj: Node
    b_proj: Node

    @classmethod
    def from_nodes(cls, nodes: Dict[str, Node], prefix: str) -> 'BiEncoderParams':
        return cls(
            forward=LstmParams.from_nodes(nodes, f"{prefix}.fwd"),
            backward=LstmParams.from_nodes(nodes, f"{prefix}.bwd"),
            W_proj=nodes[f"{prefix}.proj.W"],
            b_proj=nodes[f"{prefix}.proj.b"]
        )

    @property
    def input_size(self) -> int:
        return self.forward.input_size

    @property
    def hidden_size(self) -> int:
        return self.W_proj.shape[0]


@dataclass
class EncodedSequence:
    """Encoded features [B, h, L]; columns are timesteps"""
    features: Node
    length: int


def lstm_parameter_shapes(prefix: str, input_size: int, hidden_size: int) -> Dict[str, Tuple[int, ...]]:
    shapes = {}
    for gate in GATES:
        shapes[f"{prefix}.W_{gate}"] = (hidden_size, input_size + hidden_size)
        shapes[f"{prefix}.b_{gate}"] = (hidden_size,)
    return shapes


def bi_encoder_parameter_shapes(prefix: str, input_size: int, hidden_size: int) -> Dict[str, Tuple[int, ...]]:
    shapes = {}
    shapes.update(lstm_parameter_shapes(f"{prefix}.fwd", input_size, hidden_size))
    shapes.update(lstm_parameter_shapes(f"{prefix}.bwd", input_size, hidden_size))
    shapes[f"{prefix}.proj.W"] = (hidden_size, 2 * hidden_size)
    shapes[f"{prefix}.proj.b"] = (hidden_size,)
    return shapes


def lstm_step(tape: Tape, x: Node, h_prev: Node, c_prev: Node, params: LstmParams) -> Tuple[Node, Node]:
    """
    One LSTM step on column vectors

    Args:
        tape: Tape recording the step
        x: Input [B, d_in, 1]
        h_prev: Previous hidden state [B, h, 1]
        c_prev: Previous cell state [B, h, 1]
        params: Gate parameters

    Returns:
        (h, c) with c = f*c_prev + i*g and h = o*tanh(c)

    Raises:
        ShapeError: If x or the states do not fit the gate weights
    """
    hidden = params.hidden_size
    if x.shape[-2] != params.input_size:
        raise ShapeError(f"lstm_step input {x.label}", f"{params.input_size} rows", str(x.shape))
    if h_prev.shape[-2] != hidden or c_prev.shape[-2] != hidden:
        raise ShapeError("lstm_step state", f"{hidden} rows", f"{h_prev.shape}, {c_prev.shape}")

    xh = tape.concat([x, h_prev], axis=-2)
    i = tape.sigmoid(tape.add(tape.matmul(params.W_i, xh), params.b_i))
    f = tape.sigmoid(tape.add(tape.matmul(params.W_f, xh), params.b_f))
    o = tape.sigmoid(tape.add(tape.matmul(params.W_o, xh), params.b_o))
    g = tape.tanh(tape.add(tape.matmul(params.W_g, xh), params.b_g))
    c = tape.add(tape.mul(f, c_prev), tape.mul(i, g))
    h = tape.mul(o, tape.tanh(c))
    return h, c


def run_lstm(tape: Tape, inputs: Node, params: LstmParams, reverse: bool = False) -> Node:
    """Unroll an LSTM over the columns of inputs [B, d, L]; outputs stay in input order"""
    batch, length = inputs.shape[0], inputs.shape[-1]
    zeros = np.zeros((batch, params.hidden_size, 1))
    h, c = tape.constant(zeros), tape.constant(zeros)
    outputs: List[Optional[Node]] = [None] * length
    steps = range(length - 1, -1, -1) if reverse else range(length)
    for t in steps:
        x_t = tape.slice(inputs, t, t + 1, axis=-1)
        h, c = lstm_step(tape, x_t, h, c, params)
        outputs[t] = h
    return tape.concat(outputs, axis=-1)


def dropout(tape: Tape, features: Node, rate: float, training: bool,
            rng: Optional[np.random.Generator]) -> Node:
    """Inverted dropout; identity outside training"""
    if not training or rate <= 0.0:
        return features
    if rng is None:
        raise GraphUsageError("Dropout during training requires a seeded generator")
    keep = (rng.random(features.shape) >= rate) / (1.0 - rate)
    return tape.mul(features, tape.constant(keep))


def encode_sequence(tape: Tape, inputs: Node, params: BiEncoderParams, dropout_rate: float = 0.0,
                    training: bool = False, rng: Optional[np.random.Generator] = None) -> EncodedSequence:
    """
    Bidirectional encoding: column j = relu(W (h^f_j || h^b_j) + b)

    Raises:
        GraphUsageError: If the sequence is empty
        ShapeError: If the feature width does not match the encoder
    """
    if inputs.value.ndim != 3:
        raise ShapeError(f"encoder input {inputs.label}", "[B, d, L]", str(inputs.shape))
    length = inputs.shape[-1]
    if length == 0:
        raise GraphUsageError("Cannot encode an empty sequence")
    if inputs.shape[-2] != params.input_size:
        raise ShapeError(f"encoder input {inputs.label}", f"{params.input_size} feature rows", str(inputs.shape))
    params.forward.validate()
    params.backward.validate()

    forward_states = run_lstm(tape, inputs, params.forward, reverse=False)
    backward_states = run_lstm(tape, inputs, params.backward, reverse=True)
    stacked = tape.concat([forward_states, backward_states], axis=-2)
    projected = tape.relu(tape.add(tape.matmul(params.W_proj, stacked), params.b_proj))
    return EncodedSequence(features=dropout(tape, projected, dropout_rate, training, rng), length=length)


def encode_video(tape: Tape, clips: Node, params: BiEncoderParams, dropout_rate: float = 0.0,
                 training: bool = False, rng: Optional[np.random.Generator] = None) -> EncodedSequence:
    """Encode clip features [B, d_v, M]"""
    return encode_sequence(tape, clips, params, dropout_rate, training, rng)


def encode_sentence(tape: Tape, tokens: Node, params: BiEncoderParams, dropout_rate: float = 0.0,
                    training: bool = False, rng: Optional[np.random.Generator] = None) -> EncodedSequence:
    """Encode word embeddings [B, d_w, N]"""
    return encode_sequence(tape, tokens, params, dropout_rate, training, rng)


def embed_tokens(tape: Tape, table: Node, token_ids: np.ndarray) -> Node:
    """
    Look up columns of the embedding table [d_w, |V|] for token ids [B, N]

    The lookup is a matmul with one-hot columns so it stays inside the
    differentiable operation set.
    """
    token_ids = np.asarray(token_ids)
    vocab_size = table.shape[1]
    if token_ids.ndim != 2 or token_ids.shape[1] == 0:
        raise GraphUsageError(f"Token ids must be [B, N] with N >= 1, got {token_ids.shape}")
    if token_ids.min() < 0 or token_ids.max() >= vocab_size:
        raise ShapeError("embed_tokens", f"ids in [0, {vocab_size})", f"[{token_ids.min()}, {token_ids.max()}]")
    one_hot = np.zeros((token_ids.shape[0], vocab_size, token_ids.shape[1]))
    batch_index, position = np.meshgrid(np.arange(token_ids.shape[0]), np.arange(token_ids.shape[1]), indexing='ij')
    one_hot[batch_index, token_ids, position] = 1.0
    return tape.matmul(table, tape.constant(one_hot))


def project_clips(tape: Tape, clips: Node, weight: Node, bias: Node) -> EncodedSequence:
    """Direct linear projection of clip features to width h, bypassing the video LSTM"""
    if clips.shape[-2] != weight.shape[1]:
        raise ShapeError(f"clip projection {clips.label}", f"{weight.shape[1]} feature rows", str(clips.shape))
    return EncodedSequence(features=tape.add(tape.matmul(weight, clips), bias), length=clips.shape[-1])
