"""
Model module: parameter layout, initialisation and the per-variant forward and loss graphs
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from sentence_localizer.autodiff import Graph, Node, PRECISIONS, ShapeError, Tape
from sentence_localizer.coattention import (
    CoAttentionOutput, CoAttentionParams, attention_parameter_shapes, co_attention, single_vector_attention
)
from sentence_localizer.config_loader import TrainConfig, Variant
from sentence_localizer.encoders import (
    BiEncoderParams, bi_encoder_parameter_shapes, embed_tokens, encode_sentence, encode_video, project_clips
)
from sentence_localizer.heads import (
    AfHeadParams, AwHeadParams, af_head_parameter_shapes, aw_head_parameter_shapes, regress_af, regress_aw
)
from sentence_localizer.losses import calibration_loss_node, regression_loss_node

logger = logging.getLogger(__name__)

Shapes = Dict[str, Tuple[int, ...]]


@dataclass(frozen=True)
class ModelDims:
    """Data-dependent sizes that complete a TrainConfig"""
    vocab_size: int
    feature_dim: int
    clip_count: int


@dataclass
class ForwardOutput:
    """Raw head output [B, 2, 1] (None for attention post-processing) and the attention trace"""
    raw: Optional[Node]
    attention: CoAttentionOutput


@dataclass
class LossNodes:
    l_reg: Node
    l_cal: Node
    total: Node


def parameter_shapes(config: TrainConfig, dims: ModelDims) -> Shapes:
    """Every parameter name and shape for a variant, in initialisation order"""
    variant = config.variant
    h, k, d_r = config.hidden_size, config.attention_size, config.regression_size
    shapes: Shapes = {'embedding.table': (config.word_dim, dims.vocab_size)}
    if variant.uses_video_lstm:
        shapes.update(bi_encoder_parameter_shapes('video', dims.feature_dim, h))
    else:
        shapes['clip_proj.W'] = (h, dims.feature_dim)
        shapes['clip_proj.b'] = (h,)
    shapes.update(bi_encoder_parameter_shapes('sentence', config.word_dim, h))
    steps = ('attn1',) if variant.single_vector_sentence else ('attn1', 'attn2', 'attn3')
    for prefix in steps:
        shapes.update(attention_parameter_shapes(prefix, h, k))
    if variant.head == 'aw':
        shapes.update(aw_head_parameter_shapes(dims.clip_count, d_r))
    elif variant.head == 'af':
        shapes.update(af_head_parameter_shapes(h, d_r))
    return shapes


def count_parameters(shapes: Shapes) -> int:
    return sum(int(np.prod(shape)) for shape in shapes.values())


def _is_lstm_forget_bias(name: str) -> bool:
    return name.endswith('.b_f') and ('.fwd.' in name or '.bwd.' in name)


def _is_bias(name: str, shape: Tuple[int, ...]) -> bool:
    return len(shape) == 1 and not name.endswith('.u_a')


def init_params(shapes: Shapes, rng: np.random.Generator, dtype=np.float32) -> Dict[str, np.ndarray]:
    """
    Glorot-uniform weights, zero biases and forget-gate biases of 1.0

    A vector weight (the attention scoring vector) takes fan_in = its length, fan_out = 1.
    """
    params = {}
    for name, shape in shapes.items():
        if _is_bias(name, shape):
            fill = 1.0 if _is_lstm_forget_bias(name) else 0.0
            params[name] = np.full(shape, fill, dtype=dtype)
            continue
        fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (1, shape[0])
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return params


class LocalizerModel:
    """Forward and loss graphs for one variant and its dimensions"""

    def __init__(self, config: TrainConfig, dims: ModelDims):
        if dims.clip_count != config.clip_count:
            raise ShapeError("model clip count", f"{config.clip_count} clips", f"{dims.clip_count} clips")
        self.config = config
        self.dims = dims
        self.variant: Variant = config.variant
        self.shapes = parameter_shapes(config, dims)

    @property
    def parameter_count(self) -> int:
        return count_parameters(self.shapes)

    def init_params(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        params = init_params(self.shapes, rng, PRECISIONS[self.config.precision])
        logger.debug(f"Initialised {len(params)} tensors, {self.parameter_count} parameters "
                     f"for variant {self.variant.value}")
        return params

    def validate_params(self, params: Mapping[str, np.ndarray]) -> None:
        """
        Raises:
            ShapeError: If a tensor is missing, unexpected or mis-shaped
        """
        missing = sorted(set(self.shapes) - set(params))
        unexpected = sorted(set(params) - set(self.shapes))
        if missing or unexpected:
            raise ShapeError("parameter set", "missing none and no extras",
                             f"missing {missing}, unexpected {unexpected}")
        for name, shape in self.shapes.items():
            if tuple(np.shape(params[name])) != shape:
                raise ShapeError(name, str(shape), str(tuple(np.shape(params[name]))))

    def forward(self, tape: Tape, nodes: Dict[str, Node], clips: np.ndarray, token_ids: np.ndarray,
                training: bool = False, rng: Optional[np.random.Generator] = None) -> ForwardOutput:
        """
        Encode both modalities, run the attention steps and the head of the variant

        Args:
            clips: Clip features [B, d_v, M]
            token_ids: Token ids [B, N], one sentence length per batch

        Raises:
            ShapeError: If the inputs do not fit the parameters
        """
        clips = np.asarray(clips)
        if clips.ndim != 3 or clips.shape[1:] != (self.dims.feature_dim, self.dims.clip_count):
            raise ShapeError("clip features", f"[B, {self.dims.feature_dim}, {self.dims.clip_count}]",
                             str(clips.shape))
        rate = self.config.dropout
        clip_node = tape.constant(clips, name='clips')
        if self.variant.uses_video_lstm:
            video = encode_video(tape, clip_node, BiEncoderParams.from_nodes(nodes, 'video'), rate, training, rng)
        else:
            video = project_clips(tape, clip_node, nodes['clip_proj.W'], nodes['clip_proj.b'])
        words = embed_tokens(tape, nodes['embedding.table'], token_ids)
        sentence = encode_sentence(tape, words, BiEncoderParams.from_nodes(nodes, 'sentence'), rate, training, rng)

        if self.variant.single_vector_sentence:
            attention = single_vector_attention(tape, video, sentence,
                                                CoAttentionParams.from_nodes(nodes, single_step=True))
        else:
            attention = co_attention(tape, video, sentence, CoAttentionParams.from_nodes(nodes))

        raw = None
        if self.variant.head == 'aw':
            raw = regress_aw(tape, attention.a_v, AwHeadParams.from_nodes(nodes))
        elif self.variant.head == 'af':
            raw = regress_af(tape, attention.v_tilde, attention.s_tilde, AfHeadParams.from_nodes(nodes))
        return ForwardOutput(raw=raw, attention=attention)

    def loss(self, tape: Tape, output: ForwardOutput, targets: np.ndarray, masks: np.ndarray) -> LossNodes:
        """
        Batch-mean regression and calibration terms and alpha * l_reg + beta * l_cal

        Args:
            targets: Normalised ground-truth coordinates [B, 2, 1]
            masks: Ground-truth clip masks [B, M]
        """
        batch = output.attention.a_v.shape[0]
        if output.raw is None:
            l_reg = tape.constant(0.0, name='l_reg')
        else:
            l_reg = tape.scale(regression_loss_node(tape, output.raw, tape.constant(targets)), 1.0 / batch)
        l_cal = tape.scale(calibration_loss_node(tape, output.attention.a_v, masks), 1.0 / batch)
        total = tape.add(tape.scale(l_reg, self.config.alpha), tape.scale(l_cal, self.config.beta))
        return LossNodes(l_reg=l_reg, l_cal=l_cal, total=total)

    def build_graph(self, params: Dict[str, np.ndarray], training: bool = False,
                    seed: Optional[int] = None, precision: Optional[str] = None) -> Graph:
        """
        Graph over inputs 'clips', 'tokens', 'targets', 'masks' with outputs
        'raw' (when the variant has a head), 'a_v', 'l_reg', 'l_cal' and 'loss'

        Training graphs redraw the same dropout masks on every forward so repeated
        evaluations see one function of the parameters.
        """

        def build(tape: Tape, nodes: Dict[str, Node], inputs: Mapping[str, np.ndarray]) -> Dict[str, Node]:
            rng = np.random.default_rng(seed) if training else None
            output = self.forward(tape, nodes, inputs['clips'], inputs['tokens'], training, rng)
            outputs = {'a_v': output.attention.a_v}
            if output.raw is not None:
                outputs['raw'] = output.raw
            if 'targets' in inputs and 'masks' in inputs:
                losses = self.loss(tape, output, inputs['targets'], inputs['masks'])
                outputs.update(l_reg=losses.l_reg, l_cal=losses.l_cal, loss=losses.total)
            return outputs

        return Graph(build_fn=build, parameters=params, precision=precision or self.config.precision)
