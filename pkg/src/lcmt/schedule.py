"""Ramp-up curves, learning-rate plan and the two-phase curriculum.

Epochs may be fractional (``epoch + iteration / iterations_per_epoch``) so
that curves move smoothly inside an epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class RampUp:
    start_epoch: float
    length_epochs: float
    max_value: float

    def __post_init__(self):
        if self.length_epochs < 1:
            raise ValueError("ramp-up length must be >= 1 epoch")
        if self.max_value < 0:
            raise ValueError("ramp-up max_value must be >= 0")


@dataclass(frozen=True)
class LrPlan:
    base_lr: float
    decay_start_epoch: float
    decay_length_epochs: float

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if self.decay_length_epochs <= 0:
            raise ValueError("decay length must be positive")


@dataclass(frozen=True)
class Curriculum:
    mt_only_epochs: int
    cons_rampup: RampUp
    lc_rampup: RampUp
    lr: LrPlan
    total_epochs: int

    def __post_init__(self):
        if self.lc_rampup.start_epoch != self.mt_only_epochs:
            raise ValueError("clustering ramp-up must start when the MT-only phase ends")
        if self.total_epochs < 1 or self.mt_only_epochs < 0:
            raise ValueError("epoch counts must be positive")


def sigmoid_rampup(x: float) -> float:
    """exp(-5 (1 - x)^2) with x clamped to [0, 1]."""
    x = min(max(float(x), 0.0), 1.0)
    return math.exp(-5.0 * (1.0 - x) ** 2)


def coefficient_at(epoch: float, r: RampUp) -> float:
    if epoch < r.start_epoch:
        return 0.0
    progress = (epoch - r.start_epoch) / r.length_epochs
    if progress >= 1.0:
        return r.max_value
    return r.max_value * sigmoid_rampup(progress)


def lr_at(epoch: float, p: LrPlan) -> float:
    if epoch <= p.decay_start_epoch:
        return p.base_lr
    progress = (epoch - p.decay_start_epoch) / p.decay_length_epochs
    if progress >= 1.0:
        return 0.0
    return p.base_lr * (1.0 - progress)


def active_losses(epoch: float, c: Curriculum) -> tuple[float, float]:
    """(lambda1, lambda2) in effect at ``epoch``."""
    return coefficient_at(epoch, c.cons_rampup), coefficient_at(epoch, c.lc_rampup)
