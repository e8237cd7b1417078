"""
Test suite for the bidirectional LSTM encoders
Following TDD approach with AAA pattern and descriptive naming
"""

import math

import numpy as np
import pytest

from sentence_localizer.autodiff import Graph, GraphUsageError, ShapeError, Tape
from sentence_localizer.encoders import (
    BiEncoderParams, LstmParams, bi_encoder_parameter_shapes, dropout, embed_tokens,
    encode_sentence, encode_video, lstm_parameter_shapes, lstm_step, project_clips
)
from sentence_localizer.gradient_checker import GradientChecker


def _random_params(rng, shapes, scale=0.5):
    return {name: rng.uniform(-scale, scale, size=shape) for name, shape in shapes.items()}


def _scalar_sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def _scalar_lstm(params, prefix, columns, reverse=False):
    """Element-by-element LSTM recursion over a list of input columns"""
    hidden = params[f"{prefix}.b_i"].shape[0]
    h = [0.0] * hidden
    c = [0.0] * hidden
    outputs = [None] * len(columns)
    order = range(len(columns) - 1, -1, -1) if reverse else range(len(columns))
    for t in order:
        xh = list(columns[t]) + h
        gates = {}
        for gate in ('i', 'f', 'o', 'g'):
            W = params[f"{prefix}.W_{gate}"]
            b = params[f"{prefix}.b_{gate}"]
            gates[gate] = [sum(W[r, j] * xh[j] for j in range(len(xh))) + b[r] for r in range(hidden)]
        c = [_scalar_sigmoid(gates['f'][r]) * c[r] + _scalar_sigmoid(gates['i'][r]) * math.tanh(gates['g'][r])
             for r in range(hidden)]
        h = [_scalar_sigmoid(gates['o'][r]) * math.tanh(c[r]) for r in range(hidden)]
        outputs[t] = h
    return outputs


def _scalar_bi_encoder(params, prefix, sequence):
    columns = [sequence[:, j] for j in range(sequence.shape[1])]
    forward_states = _scalar_lstm(params, f"{prefix}.fwd", columns)
    backward_states = _scalar_lstm(params, f"{prefix}.bwd", columns, reverse=True)
    W, b = params[f"{prefix}.proj.W"], params[f"{prefix}.proj.b"]
    out = np.zeros((W.shape[0], sequence.shape[1]))
    for j in range(sequence.shape[1]):
        stacked = forward_states[j] + backward_states[j]
        for r in range(W.shape[0]):
            out[r, j] = max(0.0, sum(W[r, k] * stacked[k] for k in range(len(stacked))) + b[r])
    return out


def _nodes(tape, params):
    return {name: tape.parameter(name, value) for name, value in params.items()}


class TestLstmStep:
    """Single LSTM cell updates"""

    def test_lstm_step_with_zero_parameters_returns_zero_states(self, rng):
        """Gates sit at 0.5 but the candidate is tanh(0) = 0"""
        # Arrange
        tape = Tape()
        params = LstmParams.from_nodes(_nodes(tape, {
            name: np.zeros(shape) for name, shape in lstm_parameter_shapes('cell', 3, 4).items()}), 'cell')
        x = tape.constant(rng.standard_normal((1, 3, 1)))
        zero = tape.constant(np.zeros((1, 4, 1)))

        # Act
        h, c = lstm_step(tape, x, zero, zero, params)

        # Assert
        assert not h.value.any()
        assert not c.value.any()

    def test_lstm_step_with_saturated_forget_and_closed_input_keeps_cell(self, rng):
        """Forget bias +inf and input bias -inf carry c_prev through unchanged"""
        # Arrange
        tape = Tape()
        values = {name: np.zeros(shape) for name, shape in lstm_parameter_shapes('cell', 3, 4).items()}
        values['cell.b_f'] = np.full(4, 50.0)
        values['cell.b_i'] = np.full(4, -50.0)
        values['cell.W_g'] = rng.standard_normal((4, 7))
        params = LstmParams.from_nodes(_nodes(tape, values), 'cell')
        c_prev = rng.standard_normal((1, 4, 1))

        # Act
        _, c = lstm_step(tape, tape.constant(rng.standard_normal((1, 3, 1))),
                         tape.constant(rng.standard_normal((1, 4, 1))), tape.constant(c_prev), params)

        # Assert
        np.testing.assert_allclose(c.value, c_prev, atol=1e-12)

    def test_lstm_step_with_random_instance_matches_scalar_recomputation(self, rng):
        """Vectorised step equals the element-by-element recursion within 1e-6"""
        # Arrange
        values = _random_params(rng, lstm_parameter_shapes('cell', 3, 4))
        tape = Tape()
        params = LstmParams.from_nodes(_nodes(tape, values), 'cell')
        x = rng.standard_normal(3)

        # Act
        h, _ = lstm_step(tape, tape.constant(x.reshape(1, 3, 1)), tape.constant(np.zeros((1, 4, 1))),
                         tape.constant(np.zeros((1, 4, 1))), params)

        # Assert
        expected = _scalar_lstm(values, 'cell', [x])[0]
        np.testing.assert_allclose(h.value.reshape(-1), expected, atol=1e-6)

    def test_lstm_step_with_wrong_input_width_raises_shape_error(self):
        """x must have d_in rows"""
        # Arrange
        tape = Tape()
        params = LstmParams.from_nodes(_nodes(tape, {
            name: np.zeros(shape) for name, shape in lstm_parameter_shapes('cell', 3, 4).items()}), 'cell')
        zero = tape.constant(np.zeros((1, 4, 1)))

        # Act & Assert
        with pytest.raises(ShapeError):
            lstm_step(tape, tape.constant(np.zeros((1, 5, 1))), zero, zero, params)


class TestBiEncoder:
    """Video and sentence encoders"""

    def test_encode_video_with_random_instance_matches_unrolled_oracle(self, rng):
        """M=4, h=3 against the scalar-loop oracle"""
        # Arrange
        values = _random_params(rng, bi_encoder_parameter_shapes('video', 5, 3))
        clips = rng.standard_normal((5, 4))
        tape = Tape()
        params = BiEncoderParams.from_nodes(_nodes(tape, values), 'video')

        # Act
        encoded = encode_video(tape, tape.constant(clips[None]), params)

        # Assert
        assert encoded.length == 4
        np.testing.assert_allclose(encoded.features.value[0], _scalar_bi_encoder(values, 'video', clips), atol=1e-6)

    def test_encode_sentence_with_random_instance_matches_unrolled_oracle(self, rng):
        """N=5, h=3 against the scalar-loop oracle"""
        # Arrange
        values = _random_params(rng, bi_encoder_parameter_shapes('sentence', 4, 3))
        words = rng.standard_normal((4, 5))
        tape = Tape()
        params = BiEncoderParams.from_nodes(_nodes(tape, values), 'sentence')

        # Act
        encoded = encode_sentence(tape, tape.constant(words[None]), params)

        # Assert
        np.testing.assert_allclose(encoded.features.value[0], _scalar_bi_encoder(values, 'sentence', words), atol=1e-6)

    def test_encode_sentence_with_single_token_returns_one_column(self, rng):
        """A one-word sentence encodes to a single column"""
        # Arrange
        tape = Tape()
        params = BiEncoderParams.from_nodes(_nodes(tape, _random_params(rng, bi_encoder_parameter_shapes('s', 4, 3))), 's')

        # Act
        encoded = encode_sentence(tape, tape.constant(rng.standard_normal((2, 4, 1))), params)

        # Assert
        assert encoded.features.shape == (2, 3, 1)
        assert encoded.length == 1

    def test_encode_video_with_batch_matches_per_sample_encoding(self, rng):
        """Samples in a batch do not interact"""
        # Arrange
        values = _random_params(rng, bi_encoder_parameter_shapes('video', 5, 3))
        clips = rng.standard_normal((3, 5, 6))
        tape = Tape()
        params = BiEncoderParams.from_nodes(_nodes(tape, values), 'video')

        # Act
        batched = encode_video(tape, tape.constant(clips), params).features.value
        single = encode_video(tape, tape.constant(clips[1:2]), params).features.value

        # Assert
        np.testing.assert_allclose(batched[1], single[0], atol=1e-12)

    def test_encode_video_with_zero_clips_raises_graph_usage_error(self, rng):
        """An empty sequence cannot be encoded"""
        # Arrange
        tape = Tape()
        params = BiEncoderParams.from_nodes(_nodes(tape, _random_params(rng, bi_encoder_parameter_shapes('v', 5, 3))), 'v')

        # Act & Assert
        with pytest.raises(GraphUsageError):
            encode_video(tape, tape.constant(np.zeros((1, 5, 0))), params)

    def test_encode_video_with_wrong_feature_width_raises_shape_error(self, rng):
        """Feature rows must match the encoder input size"""
        # Arrange
        tape = Tape()
        params = BiEncoderParams.from_nodes(_nodes(tape, _random_params(rng, bi_encoder_parameter_shapes('v', 5, 3))), 'v')

        # Act & Assert
        with pytest.raises(ShapeError):
            encode_video(tape, tape.constant(np.zeros((1, 4, 3))), params)

    def test_encode_video_with_dropout_outside_training_is_identity(self, rng):
        """Dropout only acts during training"""
        # Arrange
        values = _random_params(rng, bi_encoder_parameter_shapes('v', 5, 3))
        clips = rng.standard_normal((1, 5, 4))
        tape = Tape()
        params = BiEncoderParams.from_nodes(_nodes(tape, values), 'v')

        # Act
        plain = encode_video(tape, tape.constant(clips), params).features.value
        evaluated = encode_video(tape, tape.constant(clips), params, dropout_rate=0.5, training=False).features.value

        # Assert
        np.testing.assert_array_equal(plain, evaluated)


    def test_encode_video_with_one_perturbed_clip_changes_every_output_column(self, rng):
        """Each output column sees the whole video through one of the two directions"""
        # Arrange
        values = _random_params(rng, bi_encoder_parameter_shapes('video', 5, 3))
        values['video.proj.b'] = np.full(3, 5.0)
        clips = rng.standard_normal((1, 5, 6))
        perturbed = clips.copy()
        perturbed[0, :, 2] += 1.0
        tape = Tape()
        params = BiEncoderParams.from_nodes(_nodes(tape, values), 'video')

        # Act
        original = encode_video(tape, tape.constant(clips), params).features.value[0]
        changed = encode_video(tape, tape.constant(perturbed), params).features.value[0]

        # Assert
        column_change = np.abs(changed - original).max(axis=0)
        assert (column_change > 1e-12).all()

    def test_encode_video_with_reversed_clips_and_swapped_directions_mirrors_output(self, rng):
        """Reversing time while swapping the forward and backward cells reverses the columns"""
        # Arrange
        values = _random_params(rng, bi_encoder_parameter_shapes('video', 5, 3))
        swapped = {}
        for name, value in values.items():
            if '.fwd.' in name:
                swapped[name.replace('.fwd.', '.bwd.')] = value
            elif '.bwd.' in name:
                swapped[name.replace('.bwd.', '.fwd.')] = value
            else:
                swapped[name] = value
        W = values['video.proj.W']
        swapped['video.proj.W'] = np.concatenate([W[:, 3:], W[:, :3]], axis=1)
        clips = rng.standard_normal((1, 5, 6))
        tape, mirrored_tape = Tape(), Tape()

        # Act
        forward_order = encode_video(tape, tape.constant(clips),
                                     BiEncoderParams.from_nodes(_nodes(tape, values), 'video'))
        reversed_order = encode_video(mirrored_tape, mirrored_tape.constant(clips[:, :, ::-1].copy()),
                                      BiEncoderParams.from_nodes(_nodes(mirrored_tape, swapped), 'video'))

        # Assert
        np.testing.assert_allclose(reversed_order.features.value[0], forward_order.features.value[0][:, ::-1],
                                   atol=1e-12)

    def test_encode_video_gradients_match_central_differences(self, rng):
        """Every encoder parameter passes the finite-difference check"""
        # Arrange
        values = _random_params(rng, bi_encoder_parameter_shapes('video', 4, 3))

        def build(tape, nodes, inputs):
            encoded = encode_video(tape, tape.constant(inputs['clips']), BiEncoderParams.from_nodes(nodes, 'video'))
            return {'loss': tape.sum(tape.mul(encoded.features, tape.constant(inputs['weights'])))}

        graph = Graph(build_fn=build, parameters=values)
        inputs = {'clips': rng.standard_normal((2, 4, 5)), 'weights': rng.standard_normal((2, 3, 5))}

        # Act
        report = GradientChecker(epsilon=1e-5, tolerance=1e-4).check(graph, inputs, 'loss')

        # Assert
        assert report.passed
        assert set(report.per_parameter_error) == set(values)

class TestInputLayers:
    """Dropout, embedding lookup and the direct clip projection"""

    def test_dropout_in_training_without_generator_raises_graph_usage_error(self):
        """Training dropout must be seeded"""
        # Arrange
        tape = Tape()

        # Act & Assert
        with pytest.raises(GraphUsageError):
            dropout(tape, tape.constant(np.ones((1, 3, 2))), 0.5, True, None)

    def test_dropout_with_same_seed_draws_same_mask(self):
        """Masks are a function of the generator state"""
        # Arrange
        tape = Tape()
        features = tape.constant(np.ones((2, 4, 5)))

        # Act
        first = dropout(tape, features, 0.5, True, np.random.default_rng(9)).value
        second = dropout(tape, features, 0.5, True, np.random.default_rng(9)).value

        # Assert
        np.testing.assert_array_equal(first, second)
        assert set(np.unique(first)) <= {0.0, 2.0}

    def test_embed_tokens_with_ids_returns_table_columns(self, rng):
        """The one-hot matmul reads table columns"""
        # Arrange
        tape = Tape()
        table = rng.standard_normal((3, 6))

        # Act
        words = embed_tokens(tape, tape.parameter('embedding.table', table), np.array([[4, 0, 4]]))

        # Assert
        np.testing.assert_array_equal(words.value[0], table[:, [4, 0, 4]])

    def test_embed_tokens_with_out_of_range_id_raises_shape_error(self, rng):
        """Token ids index the vocabulary"""
        # Arrange
        tape = Tape()

        # Act & Assert
        with pytest.raises(ShapeError):
            embed_tokens(tape, tape.constant(np.zeros((3, 6))), np.array([[1, 6]]))

    def test_project_clips_with_linear_weights_skips_recurrence(self, rng):
        """Columns are projected independently"""
        # Arrange
        tape = Tape()
        W, b = rng.standard_normal((3, 5)), rng.standard_normal(3)
        clips = rng.standard_normal((1, 5, 4))

        # Act
        encoded = project_clips(tape, tape.constant(clips), tape.constant(W), tape.constant(b))

        # Assert
        np.testing.assert_allclose(encoded.features.value[0], W @ clips[0] + b[:, None], atol=1e-12)
