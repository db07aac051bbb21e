"""SGD with momentum, weight decay and stepped learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .layers import Parameter


@dataclass(frozen=True)
class SgdHyper:
    base_lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 50000

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.lr_decay_every < 1:
            raise ValueError("lr_decay_every must be at least 1")


def effective_lr(hyper: SgdHyper, step: int) -> float:
    return hyper.base_lr * hyper.lr_decay_factor ** (step // hyper.lr_decay_every)


def sgd_update(params: Iterable[Parameter], hyper: SgdHyper, step: int) -> None:
    """One momentum-SGD step; frozen params (lr_mult 0) are untouched bits."""
    lr0 = effective_lr(hyper, step)
    for p in params:
        if p.lr_mult == 0.0:
            continue
        lr = lr0 * p.lr_mult
        p.momentum_buf *= hyper.momentum
        p.momentum_buf -= lr * (p.grad + hyper.weight_decay * p.value)
        p.value += p.momentum_buf
