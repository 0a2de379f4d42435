"""Adam optimization over named parameter groups.

Each group keeps its own moment estimates and step counter, so the
per-group learning rates produced by the schedulers apply cleanly and
stepping one group never perturbs the others.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import InputError, ShapeError
from .tensor import Gradients, Tensor

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


class Group(str, Enum):
    MODALITY_A = "modality_a"
    MODALITY_B = "modality_b"
    FUSION = "fusion"


class ParamGroup:
    """Parameters updated together under one learning rate."""

    def __init__(self, group_id: Group, parameters):
        self.group_id = Group(group_id)
        self.parameters: list[Tensor] = list(parameters)
        self.first_moment = [np.zeros_like(p.data) for p in self.parameters]
        self.second_moment = [np.zeros_like(p.data) for p in self.parameters]
        self.steps = 0


def adam_step(group: ParamGroup, grads: Gradients, lr: float) -> None:
    """Apply one bias-corrected Adam update to every parameter in `group`.

    The epsilon term is added after the square root of the corrected
    second moment.
    """
    if lr <= 0:
        raise InputError(f"learning rate must be positive, got {lr}")
    group.steps += 1
    t = group.steps
    correction1 = 1.0 - BETA1**t
    correction2 = 1.0 - BETA2**t
    for p, m, v in zip(group.parameters, group.first_moment, group.second_moment):
        g = grads[p]
        if g.shape != p.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match parameter shape {p.data.shape}"
            )
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * (g * g)
        p.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + EPSILON)
