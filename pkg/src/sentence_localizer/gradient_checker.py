"""
GradientChecker module comparing reverse-mode gradients with central differences
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from sentence_localizer.autodiff import Graph, GraphUsageError

logger = logging.getLogger(__name__)


@dataclass
class ParameterCheck:
    """Finite-difference comparison for a single parameter tensor"""
    name: str
    entries_checked: int
    max_relative_error: float
    worst_index: Optional[Tuple[int, ...]] = None
    kink_entries: List[Tuple[int, ...]] = field(default_factory=list)
    negligible_entries: int = 0


@dataclass
class GradCheckReport:
    """Outcome of a gradient check over every parameter of a graph"""
    epsilon: float
    tolerance: float
    parameters: Dict[str, ParameterCheck] = field(default_factory=dict)

    @property
    def max_relative_error(self) -> float:
        if not self.parameters:
            return 0.0
        return max(check.max_relative_error for check in self.parameters.values())

    @property
    def per_parameter_error(self) -> Dict[str, float]:
        return {name: check.max_relative_error for name, check in self.parameters.items()}

    @property
    def kink_count(self) -> int:
        return sum(len(check.kink_entries) for check in self.parameters.values())

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


def relative_error(analytic: float, numeric: float) -> float:
    """|g_a - g_n| / max(|g_a|, |g_n|, 1e-8)"""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


class GradientChecker:
    """Central-difference oracle for Graph gradients"""

    def __init__(self, epsilon: float = 1e-5, tolerance: float = 1e-5,
                 max_entries: int = 400, sample_size: int = 128,
                 negligible: float = 1e-5, seed: int = 0):
        """
        Args:
            epsilon: Central-difference step
            tolerance: Relative error below which the check passes
            max_entries: Parameters with more entries are subsampled
            sample_size: Deterministic subsample size for large parameters (>= 100)
            negligible: Entries where both gradients are below this magnitude
                are counted but excluded from the error (round-off dominated)
            seed: Seed of the subsample selection
        """
        if sample_size < 100:
            raise GraphUsageError("sample_size must be at least 100 entries")
        self.epsilon = epsilon
        self.tolerance = tolerance
        self.max_entries = max_entries
        self.sample_size = sample_size
        self.negligible = negligible
        self.seed = seed

    def check(self, graph: Graph, inputs: Mapping[str, np.ndarray], output_name: str) -> GradCheckReport:
        """
        Compare analytic and numeric gradients for every parameter

        Args:
            graph: 64-bit graph whose output_name is a scalar
            inputs: Inputs bound for every forward evaluation
            output_name: Scalar output to differentiate

        Returns:
            GradCheckReport with per-parameter maximum relative errors

        Raises:
            GraphUsageError: If graph is not 64-bit or the output is not scalar
        """
        if graph.precision != 'float64':
            raise GraphUsageError("Gradient checks require float64 precision")

        outputs = graph.forward(inputs)
        if np.asarray(outputs[output_name]).size != 1:
            raise GraphUsageError(f"Output '{output_name}' is not scalar: shape {np.shape(outputs[output_name])}")
        analytic = graph.backward(output_name)

        report = GradCheckReport(epsilon=self.epsilon, tolerance=self.tolerance)
        rng = np.random.default_rng(self.seed)

        for name in sorted(graph.parameters):
            values = graph.parameters[name]
            if values.dtype != np.float64:
                values = values.astype(np.float64)
                graph.parameters[name] = values
            indices = self._select_indices(values, rng)
            check = ParameterCheck(name=name, entries_checked=len(indices), max_relative_error=0.0)

            for index in indices:
                original = values[index]
                values[index] = original + self.epsilon
                f_plus, kinks_plus = self._evaluate(graph, inputs, output_name)
                values[index] = original - self.epsilon
                f_minus, kinks_minus = self._evaluate(graph, inputs, output_name)
                values[index] = original

                if kinks_plus != kinks_minus:
                    check.kink_entries.append(index)
                    continue

                numeric = (f_plus - f_minus) / (2.0 * self.epsilon)
                exact = float(analytic[name][index])
                if max(abs(exact), abs(numeric)) < self.negligible:
                    check.negligible_entries += 1
                    continue
                error = relative_error(exact, numeric)
                if error > check.max_relative_error:
                    check.max_relative_error = error
                    check.worst_index = index

            report.parameters[name] = check
            logger.debug(f"Gradient check {name}: max relative error {check.max_relative_error:.3e} "
                         f"over {check.entries_checked} entries, {len(check.kink_entries)} at kinks")

        logger.info(f"Gradient check max relative error {report.max_relative_error:.3e} "
                    f"({'passed' if report.passed else 'FAILED'}, {report.kink_count} kink entries flagged)")
        return report

    def _select_indices(self, values: np.ndarray, rng: np.random.Generator) -> List[Tuple[int, ...]]:
        """All entries, or a deterministic subsample for large tensors"""
        if values.size <= self.max_entries:
            flat = np.arange(values.size)
        else:
            flat = np.sort(rng.choice(values.size, size=self.sample_size, replace=False))
        return [tuple(int(i) for i in np.unravel_index(f, values.shape)) for f in flat]

    @staticmethod
    def _evaluate(graph: Graph, inputs: Mapping[str, np.ndarray], output_name: str) -> Tuple[float, List[bytes]]:
        outputs = graph.forward(inputs, record=False, track_kinks=True)
        return float(np.asarray(outputs[output_name]).reshape(())), list(graph.tape.kink_signatures)


def gradient_check(graph: Graph, inputs: Mapping[str, np.ndarray], output_name: str,
                   epsilon: float = 1e-5, tolerance: float = 1e-5) -> GradCheckReport:
    """Central-difference gradient check of a scalar graph output"""
    return GradientChecker(epsilon=epsilon, tolerance=tolerance).check(graph, inputs, output_name)
