"""
Optimizer module: Adam updates and global gradient-norm clipping
"""

import logging
from typing import Dict, Optional

import numpy as np

logger = logging.getLogger(__name__)


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: Optional[float]) -> float:
    """
    Rescale grads in place so their joint L2 norm is at most max_norm

    Returns:
        The norm before clipping
    """
    norm = global_norm(grads)
    if max_norm is not None and norm > max_norm:
        factor = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * factor
    return norm


class Adam:
    """Adam with bias correction; parameters are updated in place"""

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment: Dict[str, np.ndarray] = {}
        self.second_moment: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for name, value in params.items():
            grad = grads[name]
            m = self.first_moment.get(name)
            v = self.second_moment.get(name)
            if m is None:
                m = np.zeros_like(value)
                v = np.zeros_like(value)
            m = self.beta1 * m + (1.0 - self.beta1) * grad
            v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
            self.first_moment[name] = m.astype(value.dtype, copy=False)
            self.second_moment[name] = v.astype(value.dtype, copy=False)
            update = self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.epsilon)
            value -= update.astype(value.dtype, copy=False)
