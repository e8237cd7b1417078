"""
Autodiff module: dense tensor arithmetic with reverse-mode differentiation

Tensors are numpy arrays. A Tape records every operation applied to its Nodes
and replays them backwards to produce gradients for the named parameter leaves.
A Graph binds a build function to a parameter map so the same computation can
be re-run (forward) and differentiated (backward) many times.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

PRECISIONS = {
    'float32': np.float32,
    'float64': np.float64
}

LOG_FLOOR = 1e-12


class UsageError(ValueError):
    """Raised when an operation is called outside its contract"""
    pass


class GraphUsageError(UsageError):
    """Raised when a graph is driven in the wrong order or with the wrong output"""
    pass


class ShapeError(ValueError):
    """Raised when operand shapes do not fit an operation signature"""

    def __init__(self, node: str, expected: str, actual: str):
        self.node = node
        self.expected = expected
        self.actual = actual
        super().__init__(f"Shape mismatch at {node}: expected {expected}, got {actual}")


@dataclass(eq=False)
class Node:
    """One recorded operation: its output value and how to push gradients to its inputs"""
    node_id: int
    op: str
    value: np.ndarray
    parents: Tuple['Node', ...] = ()
    backward_fn: Optional[Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]] = None
    requires_grad: bool = False
    name: Optional[str] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def label(self) -> str:
        return f"{self.op}#{self.node_id}" if self.name is None else f"{self.op}:{self.name}"


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    """
    Numerically stable softmax

    Args:
        scores: Finite real scores
        axis: Axis normalised to the probability simplex

    Returns:
        Nonnegative weights summing to one along axis

    Raises:
        UsageError: If the normalised axis is empty
    """
    scores = np.asarray(scores)
    if scores.ndim == 0 or scores.shape[axis] == 0:
        raise UsageError("softmax requires at least one score")
    shifted = scores - scores.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=axis, keepdims=True)


def smooth_l1(x):
    """Smooth L1: 0.5*x^2 inside the unit interval, |x| - 0.5 outside"""
    x = np.asarray(x)
    magnitude = np.abs(x)
    result = np.where(magnitude < 1.0, 0.5 * x * x, magnitude - 0.5)
    return result.item() if result.ndim == 0 else result


class Tape:
    """
    Records operations on Nodes for reverse-mode differentiation

    A non-recording tape evaluates the same operations without keeping the
    history, which is the inference path.
    """

    def __init__(self, dtype=np.float64, record: bool = True, track_kinks: bool = False):
        self.dtype = np.dtype(dtype)
        self.record = record
        self.track_kinks = track_kinks
        self.nodes: List[Node] = []
        self.parameters: Dict[str, Node] = {}
        # relu input signs, compared by the gradient checker to detect kinks
        self.kink_signatures: List[bytes] = []
        self._next_id = 0

    # ------------------------------------------------------------------
    # Leaves
    # ------------------------------------------------------------------

    def _push(self, op: str, value: np.ndarray, parents: Sequence[Node] = (),
              backward_fn=None, requires_grad: bool = False, name: str = None) -> Node:
        requires_grad = requires_grad or any(p.requires_grad for p in parents)
        node = Node(
            node_id=self._next_id,
            op=op,
            value=value,
            parents=tuple(parents) if self.record else (),
            backward_fn=backward_fn if (self.record and requires_grad) else None,
            requires_grad=requires_grad,
            name=name
        )
        self._next_id += 1
        if self.record:
            self.nodes.append(node)
        return node

    def parameter(self, name: str, value: np.ndarray) -> Node:
        """Register a named trainable leaf"""
        if name in self.parameters:
            raise GraphUsageError(f"Parameter '{name}' registered twice")
        node = self._push('parameter', np.asarray(value, dtype=self.dtype),
                          requires_grad=self.record, name=name)
        self.parameters[name] = node
        return node

    def constant(self, value, name: str = None) -> Node:
        """Register a non-trainable leaf"""
        return self._push('constant', np.asarray(value, dtype=self.dtype), name=name)

    # ------------------------------------------------------------------
    # Operations
    # ------------------------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        """numpy matmul semantics; leading axes broadcast (parameter @ batch)"""
        inner_a = a.shape[-1] if a.value.ndim >= 1 else None
        inner_b = b.shape[0] if b.value.ndim == 1 else (b.shape[-2] if b.value.ndim >= 2 else None)
        if inner_a is None or inner_b is None or inner_a != inner_b:
            raise ShapeError(
                f"matmul({a.label}, {b.label})",
                f"inner extents to agree",
                f"{a.shape} @ {b.shape}"
            )
        value = np.matmul(a.value, b.value)

        def backward(grad):
            if a.value.ndim == 1 and b.value.ndim == 1:
                return grad * b.value, grad * a.value
            a2 = a.value[None, :] if a.value.ndim == 1 else a.value
            b2 = b.value[:, None] if b.value.ndim == 1 else b.value
            g2 = grad
            if a.value.ndim == 1:
                g2 = np.expand_dims(g2, -2)
            if b.value.ndim == 1:
                g2 = np.expand_dims(g2, -1)
            grad_a = grad_b = None
            if a.requires_grad:
                grad_a = _unbroadcast(np.matmul(g2, np.swapaxes(b2, -1, -2)), a2.shape).reshape(a.shape)
            if b.requires_grad:
                grad_b = _unbroadcast(np.matmul(np.swapaxes(a2, -1, -2), g2), b2.shape).reshape(b.shape)
            return grad_a, grad_b

        return self._push('matmul', value, (a, b), backward)

    def add(self, a: Node, b: Node) -> Node:
        """
        Elementwise add with numpy broadcasting; a vector b whose extent matches
        the row count of a is broadcast across columns (b 1^T)
        """
        column_broadcast = b.value.ndim == 1 and a.value.ndim >= 2
        if column_broadcast and b.shape[0] != a.shape[-2]:
            raise ShapeError(f"add({a.label}, {b.label})", f"column vector of extent {a.shape[-2]}", str(b.shape))
        b_value = b.value[:, None] if column_broadcast else b.value
        try:
            out_shape = np.broadcast_shapes(a.shape, b_value.shape)
        except ValueError:
            raise ShapeError(f"add({a.label}, {b.label})", "broadcastable shapes", f"{a.shape} + {b.shape}")
        value = a.value + b_value

        def backward(grad):
            grad_a = _unbroadcast(grad, a.shape) if a.requires_grad else None
            grad_b = None
            if b.requires_grad:
                grad_b = _unbroadcast(grad, b_value.shape).reshape(b.shape)
            return grad_a, grad_b

        return self._push('add', value, (a, b), backward)

    def mul(self, a: Node, b: Node) -> Node:
        """Elementwise product with numpy broadcasting"""
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(f"mul({a.label}, {b.label})", "broadcastable shapes", f"{a.shape} * {b.shape}")
        value = a.value * b.value

        def backward(grad):
            grad_a = _unbroadcast(grad * b.value, a.shape) if a.requires_grad else None
            grad_b = _unbroadcast(grad * a.value, b.shape) if b.requires_grad else None
            return grad_a, grad_b

        return self._push('mul', value, (a, b), backward)

    def tanh(self, a: Node) -> Node:
        value = np.tanh(a.value)
        return self._push('tanh', value, (a,), lambda grad: (grad * (1.0 - value * value),))

    def sigmoid(self, a: Node) -> Node:
        value = 0.5 * (1.0 + np.tanh(0.5 * a.value))
        return self._push('sigmoid', value, (a,), lambda grad: (grad * value * (1.0 - value),))

    def relu(self, a: Node) -> Node:
        active = a.value > 0
        if self.track_kinks:
            self.kink_signatures.append(np.packbits(active).tobytes())
        value = np.where(active, a.value, 0).astype(a.value.dtype, copy=False)
        # subgradient 0 at the origin
        return self._push('relu', value, (a,), lambda grad: (grad * active,))

    def log(self, a: Node, floor: float = LOG_FLOOR) -> Node:
        """Natural log guarded below by floor (gradient 0 under the floor)"""
        above = a.value > floor
        value = np.log(np.maximum(a.value, floor))
        return self._push('log', value, (a,), lambda grad: (np.where(above, grad / np.maximum(a.value, floor), 0.0),))

    def softmax(self, a: Node, axis: int = -1) -> Node:
        if a.value.ndim == 0 or a.shape[axis] == 0:
            raise GraphUsageError(f"softmax over empty axis at {a.label}")
        value = softmax(a.value, axis=axis)

        def backward(grad):
            inner = (grad * value).sum(axis=axis, keepdims=True)
            return (value * (grad - inner),)

        return self._push('softmax', value, (a,), backward)

    def concat(self, nodes: Sequence[Node], axis: int = -1) -> Node:
        if not nodes:
            raise GraphUsageError("concat requires at least one operand")
        try:
            value = np.concatenate([n.value for n in nodes], axis=axis)
        except ValueError:
            raise ShapeError("concat", f"shapes agreeing off axis {axis}", str([n.shape for n in nodes]))
        boundaries = np.cumsum([n.shape[axis] for n in nodes])[:-1]

        def backward(grad):
            return tuple(np.split(grad, boundaries, axis=axis))

        return self._push('concat', value, tuple(nodes), backward)

    def mean(self, a: Node, axis: int = -1) -> Node:
        """Mean over one axis, kept as an extent-1 axis"""
        extent = a.shape[axis]
        value = a.value.mean(axis=axis, keepdims=True)
        return self._push('mean', value, (a,),
                          lambda grad: (np.broadcast_to(grad / extent, a.shape).copy(),))

    def weighted_sum(self, z: Node, weights: Node) -> Node:
        """
        Column combination: z [..., h, L] weighted by weights [..., L] -> [..., h, 1]
        """
        if z.value.ndim < 2 or weights.value.ndim < 1 or z.shape[-1] != weights.shape[-1]:
            raise ShapeError(f"weighted_sum({z.label}, {weights.label})",
                             "z [..., h, L] with weights [..., L]", f"{z.shape} and {weights.shape}")
        w_col = weights.value[..., None]
        value = np.matmul(z.value, w_col)

        def backward(grad):
            grad_z = grad_w = None
            if z.requires_grad:
                grad_z = _unbroadcast(np.matmul(grad, np.swapaxes(w_col, -1, -2)), z.shape)
            if weights.requires_grad:
                grad_w = _unbroadcast(np.matmul(np.swapaxes(z.value, -1, -2), grad)[..., 0], weights.shape)
            return grad_z, grad_w

        return self._push('weighted_sum', value, (z, weights), backward)

    def slice(self, a: Node, start: int, stop: int, axis: int = -1) -> Node:
        axis = axis % a.value.ndim
        if not 0 <= start < stop <= a.shape[axis]:
            raise ShapeError(f"slice({a.label})", f"0 <= start < stop <= {a.shape[axis]}", f"[{start}:{stop}]")
        index = [slice(None)] * a.value.ndim
        index[axis] = slice(start, stop)
        index = tuple(index)
        value = a.value[index]

        def backward(grad):
            full = np.zeros(a.shape, dtype=grad.dtype)
            full[index] = grad
            return (full,)

        return self._push('slice', value, (a,), backward)

    def smooth_l1(self, a: Node) -> Node:
        inside = np.abs(a.value) < 1.0
        value = np.asarray(smooth_l1(a.value), dtype=self.dtype)
        return self._push('smooth_l1', value, (a,),
                          lambda grad: (grad * np.where(inside, a.value, np.sign(a.value)),))

    def sum(self, a: Node) -> Node:
        value = np.asarray(a.value.sum(), dtype=self.dtype)
        return self._push('sum', value, (a,), lambda grad: (np.broadcast_to(grad, a.shape).copy(),))

    # ------------------------------------------------------------------
    # Compositions over the primitive set
    # ------------------------------------------------------------------

    def scale(self, a: Node, factor: float) -> Node:
        return self.mul(a, self.constant(factor))

    def sub(self, a: Node, b: Node) -> Node:
        return self.add(a, self.scale(b, -1.0))

    # ------------------------------------------------------------------
    # Reverse pass
    # ------------------------------------------------------------------

    def backward(self, output: Node) -> Dict[str, np.ndarray]:
        """
        Propagate d(output)/d(node) from a scalar output to every parameter leaf

        Args:
            output: Scalar node recorded on this tape

        Returns:
            Gradient per parameter name; parameters the output does not reach
            receive zeros of their own shape

        Raises:
            GraphUsageError: If the tape did not record or output is not scalar
        """
        if not self.record:
            raise GraphUsageError("Cannot differentiate a non-recording tape")
        if output.value.size != 1:
            raise GraphUsageError(f"backward requires a scalar output, got shape {output.shape} at {output.label}")

        grads: Dict[int, np.ndarray] = {output.node_id: np.ones_like(output.value)}
        param_grads = {name: np.zeros_like(node.value) for name, node in self.parameters.items()}

        for node in reversed(self.nodes[:output.node_id + 1]):
            grad = grads.pop(node.node_id, None)
            if grad is None:
                continue
            if node.op == 'parameter':
                param_grads[node.name] = param_grads[node.name] + grad
                continue
            if node.backward_fn is None:
                continue
            for parent, parent_grad in zip(node.parents, node.backward_fn(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent.node_id in grads:
                    grads[parent.node_id] = grads[parent.node_id] + parent_grad
                else:
                    grads[parent.node_id] = parent_grad

        return param_grads


BuildFn = Callable[[Tape, Dict[str, Node], Mapping[str, np.ndarray]], Dict[str, Node]]


@dataclass
class Graph:
    """
    A differentiable program bound to named parameters

    build_fn receives a fresh tape, the parameter nodes and the inputs and
    returns named output nodes.
    """
    build_fn: BuildFn
    parameters: Dict[str, np.ndarray]
    precision: str = 'float64'
    _tape: Optional[Tape] = field(default=None, init=False, repr=False)
    _outputs: Dict[str, Node] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.precision not in PRECISIONS:
            raise UsageError(f"Unknown precision '{self.precision}', expected one of {sorted(PRECISIONS)}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    @property
    def tape(self) -> Optional[Tape]:
        return self._tape

    def forward(self, inputs: Mapping[str, np.ndarray], record: bool = True,
                track_kinks: bool = False) -> Dict[str, np.ndarray]:
        """Run the program, keeping the tape for a later backward pass"""
        tape = Tape(dtype=self.dtype, record=record, track_kinks=track_kinks)
        nodes = {name: tape.parameter(name, value) for name, value in self.parameters.items()}
        outputs = self.build_fn(tape, nodes, inputs)
        self._tape = tape
        self._outputs = outputs
        return {name: node.value for name, node in outputs.items()}

    def backward(self, output_name: str) -> Dict[str, np.ndarray]:
        if self._tape is None:
            raise GraphUsageError("backward called before forward")
        if output_name not in self._outputs:
            raise GraphUsageError(f"Unknown output '{output_name}', available: {sorted(self._outputs)}")
        return self._tape.backward(self._outputs[output_name])


def forward(graph: Graph, inputs: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Execute graph on inputs, populating its tape"""
    return graph.forward(inputs)


def backward(graph: Graph, scalar_output: str) -> Dict[str, np.ndarray]:
    """Gradients of a scalar graph output with respect to every parameter"""
    return graph.backward(scalar_output)
