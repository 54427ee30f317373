"""Adagrad and the step-halving learning-rate schedule."""

from dataclasses import dataclass

import numpy as np

EPSILON = 1e-8


@dataclass(frozen=True)
class TrainSchedule:
    learning_rate: float
    total_steps: int
    milestones: tuple = ()
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.total_steps < 0:
            raise ValueError("total_steps must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        ms = self.milestones
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"milestones must be strictly increasing, got {ms}")
        if ms and (ms[0] <= 0 or ms[-1] >= self.total_steps):
            raise ValueError(f"milestones {ms} must lie in (0, {self.total_steps})")

    def rate_at(self, step):
        """Learning rate for 0-based ``step``; halved at each passed milestone."""
        halvings = sum(1 for m in self.milestones if step >= m)
        return self.learning_rate * 0.5 ** halvings


def adagrad_step(params, grads, learning_rate, eps=EPSILON):
    """In-place Adagrad update of a :class:`LayerParams`."""
    for name, accum_name in (("weights", "accum_weights"), ("biases", "accum_biases")):
        g = grads[name]
        p = getattr(params, name)
        acc = getattr(params, accum_name)
        acc += g * g
        p -= (learning_rate * g / (np.sqrt(acc) + eps)).astype(p.dtype, copy=False)
    return params


class Adagrad:
    """Applies :func:`adagrad_step` to a fixed list of layers under a schedule."""

    def __init__(self, layers, schedule):
        self.layers = list(layers)
        self.schedule = schedule
        self.step_count = 0

    def step(self):
        lr = self.schedule.rate_at(self.step_count)
        for layer in self.layers:
            adagrad_step(layer.params, layer.grads, lr)
        self.step_count += 1
        return lr
