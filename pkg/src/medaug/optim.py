"""Adam optimizer over named :class:`~medaug.numerics.Tensor` parameters."""

from __future__ import annotations

import numpy as np

from .exceptions import ContractError, DimensionError, TrainingError

DEFAULT_LEARNING_RATE = 5e-4


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8 by default).

    ``params`` maps a stable name to a parameter tensor. Names are used in
    error messages and to keep the update order deterministic.
    """

    def __init__(self, params, learning_rate=DEFAULT_LEARNING_RATE, beta1=0.9, beta2=0.999, eps=1e-8):
        if learning_rate < 0:
            raise ContractError(f"learning rate must be non-negative, got {learning_rate}")
        self.params = dict(params)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {k: np.zeros_like(p.value) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, grads=None):
        """Apply one update.

        ``grads`` defaults to each parameter's accumulated ``.grad``; a
        parameter with no gradient is treated as having a zero gradient.
        """
        if grads is None:
            grads = {k: p.grad for k, p in self.params.items()}
        for name, g in grads.items():
            if g is not None and not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.value)
            elif g.shape != p.value.shape:
                raise DimensionError(f"adam_step[{name}]", p.value.shape, g.shape)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)
