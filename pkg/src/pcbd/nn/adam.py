"""Bias-corrected Adam on lists of tape variables."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ShapeMismatch
from . import kernels
from .tensor import Var


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def ensure(self, params: Sequence[Var]):
        if not self.m:
            self.m = [np.zeros_like(p.value) for p in params]
            self.v = [np.zeros_like(p.value) for p in params]
        if len(self.m) != len(params):
            raise ShapeMismatch(
                f"state tracks {len(self.m)} blocks, got {len(params)} params"
            )


def adam_step(params: Sequence[Var], state: AdamState, grads=None) -> None:
    """One in-place update; grads default to each param's accumulated .grad.

    Parameters with no gradient (None) are treated as zero-gradient and
    stay unchanged apart from moment decay.
    """
    state.ensure(params)
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params):
        raise ShapeMismatch("one gradient per parameter required")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.value)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.value.shape:
            raise ShapeMismatch(f"grad shape {g.shape} vs param {p.value.shape}")
        kernels.adam_update(
            p.value.reshape(-1),
            np.ascontiguousarray(g).reshape(-1),
            m.reshape(-1),
            v.reshape(-1),
            state.lr, b1, b2, state.eps, c1, c2,
        )
