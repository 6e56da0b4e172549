"""
Optimizer utilities: AdamW with cosine learning-rate decay.

Updates follow decoupled weight decay (the decay term is applied to the
weights directly, not folded into the adaptive moments). Every
parameter, biases included, is decayed.

Author: EgoLeak Team
Version: 1.0.0
"""

import math
from typing import Dict, Tuple

import numpy as np

from config import Config

Params = Dict[str, np.ndarray]


def cosine_learning_rate(base_lr: float, step: int, total_steps: int, min_lr: float = 0.0) -> float:
    """Cosine decay from ``base_lr`` at step 0 to ``min_lr`` at ``total_steps``."""
    if total_steps <= 0:
        return base_lr
    progress = min(step, total_steps) / total_steps
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """
    AdamW over a dict of numpy parameters, updated in place.

    The schedule is evaluated inside ``step`` so callers only pass gradients.
    """

    def __init__(self, params: Params, base_lr: float, total_steps: int,
                 weight_decay: float = Config.WEIGHT_DECAY,
                 betas: Tuple[float, float] = Config.ADAM_BETAS,
                 eps: float = Config.ADAM_EPS):
        self.params = params
        self.base_lr = base_lr
        self.total_steps = total_steps
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(value) for name, value in params.items()}
        self.v = {name: np.zeros_like(value) for name, value in params.items()}

    @property
    def current_lr(self) -> float:
        return cosine_learning_rate(self.base_lr, self.t, self.total_steps)

    def step(self, grads: Params) -> float:
        """Apply one update; returns the learning rate that was used."""
        lr = self.current_lr
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name, value in self.params.items():
            grad = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            value *= 1.0 - lr * self.weight_decay
            value -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return lr
