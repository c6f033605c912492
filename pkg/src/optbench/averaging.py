"""Temporal parameter averaging: Polyak-Ruppert running mean and
bias-corrected exponential moving average of iterates.

Averaging is a read-only tap on the iterate stream; it never feeds back into
optimization. The EMA reuses the optimizer's beta2 as its decay by default,
and divides by (1 - beta**t) so a constant stream is reproduced exactly from
the first update.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .core import RangeError, check_same_dim, zeros

__all__ = ["AveragerState", "averager_update"]


@dataclass
class AveragerState:
    """Running average state; bar_theta starts at zeros, count at 0."""

    mode: Literal["polyak", "ema"]
    bar_theta: np.ndarray
    count: int = 0
    beta: float = 0.999

    def __post_init__(self):
        if self.mode not in ("polyak", "ema"):
            raise RangeError("mode", f"unknown averaging mode {self.mode!r}")
        if not (0.0 <= self.beta < 1.0):
            raise RangeError("beta", f"must lie in [0, 1), got {self.beta}")

    @classmethod
    def zeros(cls, mode: str, dim: int, beta: float = 0.999) -> "AveragerState":
        return cls(mode=mode, bar_theta=zeros(dim), beta=beta)


def averager_update(state: AveragerState, theta: np.ndarray) -> np.ndarray:
    """Fold one iterate in; return the current averaged estimate.

    polyak: incremental arithmetic mean of every theta seen so far.
    ema:    bar = beta*bar + (1-beta)*theta, returned as bar/(1-beta**t).
    """
    check_same_dim(state.bar_theta, theta)
    state.count += 1
    if state.mode == "polyak":
        state.bar_theta = state.bar_theta + (theta - state.bar_theta) / state.count
        return state.bar_theta.copy()
    state.bar_theta = state.beta * state.bar_theta + (1.0 - state.beta) * theta
    return state.bar_theta / (1.0 - state.beta**state.count)
