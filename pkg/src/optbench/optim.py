"""Optimizer update rules: Adam (canonical and reordered), AdaMax, and the
comparison baselines (AdaGrad, RMSProp with optional momentum, SGD with
classical and Nesterov momentum), plus stepsize/decay schedules.

Every step function takes (state, theta, g, h), mutates the state in place,
and returns a StepReport with the applied update. Given those four inputs the
result is a pure function; independent states may step in parallel, one state
must never be stepped concurrently.

Conventions shared by all rules:
  - state starts at zeros, the step counter at 0, and t increments by 1;
  - components whose denominator is exactly 0 contribute a zero update (with
    epsilon = 0 this is the 0/0 limit at a zero-gradient coordinate);
  - gradients must be finite; a non-finite parameter result raises
    OverflowError rather than silently propagating Inf.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal, Sequence

import numpy as np

from .core import (
    EmptySequence,
    HyperParams,
    RangeError,
    ValidationError,
    ZeroSteps,
    check_same_dim,
    ensure_finite_gradient,
    zeros,
)

__all__ = [
    "AdamState",
    "AdaMaxState",
    "BaselineState",
    "StepReport",
    "BaselineVariant",
    "BASELINE_VARIANTS",
    "stepsize_at",
    "beta1_at",
    "beta1_bias_factor",
    "bias_factor_description",
    "adam_step",
    "adam_step_efficient",
    "adamax_step",
    "adamax_u_closed_form",
    "lp_generalized_u",
    "baseline_step",
    "bias_corrected_moments",
    "step_bound",
    "Learner",
    "make_learner",
    "LEARNER_NAMES",
]


# ---------------------------------------------------------------------------
# State types


@dataclass
class AdamState:
    """First/second raw-moment EMAs and the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "AdamState":
        return cls(m=zeros(dim), v=zeros(dim), t=0)


@dataclass
class AdaMaxState:
    """First-moment EMA and exponentially weighted infinity norm u."""

    m: np.ndarray
    u: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "AdaMaxState":
        return cls(m=zeros(dim), u=zeros(dim), t=0)


BaselineVariant = Literal[
    "adagrad", "rmsprop", "rmsprop_momentum", "sgd_momentum", "sgd_nesterov"
]
BASELINE_VARIANTS: tuple[str, ...] = (
    "adagrad",
    "rmsprop",
    "rmsprop_momentum",
    "sgd_momentum",
    "sgd_nesterov",
)


@dataclass
class BaselineState:
    """Shared state for the non-Adam rules.

    accum holds the sum of squared gradients (AdaGrad) or their EMA (RMSProp);
    momentum_buf holds the velocity for the momentum variants.
    """

    variant: str
    accum: np.ndarray
    momentum_buf: np.ndarray
    t: int = 0
    rho: float = 0.9

    def __post_init__(self):
        if self.variant not in BASELINE_VARIANTS:
            raise RangeError("variant", f"unknown baseline {self.variant!r}")
        if not (0.0 <= self.rho < 1.0):
            raise RangeError("rho", f"must lie in [0, 1), got {self.rho}")

    @classmethod
    def zeros(cls, variant: str, dim: int, rho: float = 0.9) -> "BaselineState":
        return cls(variant=variant, accum=zeros(dim), momentum_buf=zeros(dim), rho=rho)


@dataclass(frozen=True)
class StepReport:
    """One applied update: theta_next == theta - delta elementwise, exactly.

    v_hat_or_u carries the bias-corrected second moment (Adam), the infinity
    norm u (AdaMax), or the variant's accumulator (baselines).
    """

    theta_next: np.ndarray
    delta: np.ndarray
    m_hat: np.ndarray
    v_hat_or_u: np.ndarray


# ---------------------------------------------------------------------------
# Schedules


def stepsize_at(h: HyperParams, t: int) -> float:
    """alpha_t: the base stepsize, or alpha/sqrt(t) under inv_sqrt_t decay."""
    if h.alpha_schedule == "inv_sqrt_t":
        return h.alpha / math.sqrt(t)
    return h.alpha


def beta1_at(h: HyperParams, t: int) -> float:
    """beta1_t: beta1 * lam**(t-1) under exponential_decay, else beta1."""
    if h.beta1_schedule == "exponential_decay":
        return h.beta1 * h.lam ** (t - 1)
    return h.beta1


def beta1_bias_factor(h: HyperParams, t: int) -> float:
    """1 minus the accumulated first-moment decay product after t steps.

    Under the exponential_decay schedule the product of the per-step rates has
    the closed form prod_s beta1*lam**(s-1) = beta1**t * lam**(t*(t-1)/2), so
    no extra state is needed; at lam = 1 this reduces to 1 - beta1**t.
    """
    if h.beta1_schedule == "exponential_decay":
        return 1.0 - h.beta1**t * h.lam ** (t * (t - 1) // 2)
    return 1.0 - h.beta1**t


def bias_factor_description(h: HyperParams) -> str:
    """Human-readable form of the first-moment bias factor in effect.

    Run manifests record this so downstream analysis never has to guess which
    correction a scheduled-beta1 run used.
    """
    if h.beta1_schedule == "exponential_decay":
        return "1 - beta1**t * lam**(t*(t-1)/2) (decay-product form)"
    return "1 - beta1**t"


# ---------------------------------------------------------------------------
# Helpers


def _safe_div(num: np.ndarray, denom: np.ndarray) -> np.ndarray:
    """Elementwise num/denom with 0 where denom == 0."""
    out = np.zeros_like(num)
    np.divide(num, denom, out=out, where=denom > 0)
    return out


def _finish(theta: np.ndarray, delta: np.ndarray, m_hat: np.ndarray, v_or_u: np.ndarray) -> StepReport:
    theta_next = theta - delta
    if not np.all(np.isfinite(theta_next)):
        raise OverflowError("parameter update produced a non-finite value")
    return StepReport(theta_next=theta_next, delta=delta, m_hat=m_hat, v_hat_or_u=v_or_u)


def _check_step_inputs(state_vec: np.ndarray, theta: np.ndarray, g: np.ndarray) -> None:
    check_same_dim(state_vec, theta, g)
    ensure_finite_gradient(g)


# ---------------------------------------------------------------------------
# Adam


def adam_step(
    state: AdamState,
    theta: np.ndarray,
    g: np.ndarray,
    h: HyperParams,
    *,
    bias_correction: bool = True,
) -> StepReport:
    """One Adam update in the canonical order (moments, correction, step).

    With bias_correction=False the raw EMAs are used directly, which is the
    RMSProp-with-momentum-like variant the bias-correction ablation compares
    against.
    """
    _check_step_inputs(state.m, theta, g)
    t = state.t + 1
    b1t = beta1_at(h, t)
    state.m = b1t * state.m + (1.0 - b1t) * g
    state.v = h.beta2 * state.v + (1.0 - h.beta2) * g * g
    state.t = t
    if bias_correction:
        m_hat = state.m / beta1_bias_factor(h, t)
        v_hat = state.v / (1.0 - h.beta2**t)
    else:
        m_hat = state.m
        v_hat = state.v
    denom = np.sqrt(v_hat) + h.epsilon
    delta = stepsize_at(h, t) * _safe_div(m_hat, denom)
    return _finish(theta, delta, m_hat, v_hat)


def adam_step_efficient(
    state: AdamState, theta: np.ndarray, g: np.ndarray, h: HyperParams
) -> StepReport:
    """Adam with the correction folded into the stepsize; constant beta1 only.

    Uses alpha_t' = alpha_t * sqrt(1-beta2**t)/(1-beta1**t) on the raw moments
    with epsilon_hat = epsilon * sqrt(1-beta2**t), which makes the result
    algebraically identical to adam_step for every epsilon.
    """
    if h.beta1_schedule != "constant":
        raise ValidationError("adam_step_efficient requires the constant beta1 schedule")
    _check_step_inputs(state.m, theta, g)
    t = state.t + 1
    state.m = h.beta1 * state.m + (1.0 - h.beta1) * g
    state.v = h.beta2 * state.v + (1.0 - h.beta2) * g * g
    state.t = t
    bc2 = 1.0 - h.beta2**t
    alpha_t = stepsize_at(h, t) * math.sqrt(bc2) / (1.0 - h.beta1**t)
    eps_hat = h.epsilon * math.sqrt(bc2)
    denom = np.sqrt(state.v) + eps_hat
    delta = alpha_t * _safe_div(state.m, denom)
    m_hat = state.m / (1.0 - h.beta1**t)
    v_hat = state.v / bc2
    return _finish(theta, delta, m_hat, v_hat)


def bias_corrected_moments(state: AdamState, h: HyperParams) -> tuple[np.ndarray, np.ndarray]:
    """(m_hat, v_hat) = (m, v) divided by their initialization-bias factors."""
    if state.t == 0:
        raise ZeroSteps("bias correction is undefined before the first step")
    m_hat = state.m / beta1_bias_factor(h, state.t)
    v_hat = state.v / (1.0 - h.beta2**state.t)
    return m_hat, v_hat


def step_bound(h: HyperParams) -> float:
    """Magnitude cap on |delta| components at constant alpha and epsilon = 0.

    alpha*(1-beta1)/sqrt(1-beta2) in the sparse regime (1-beta1) > sqrt(1-beta2),
    else alpha. Empirical for non-sparse gradients, exact for the
    all-zero-history single-spike case as t grows.
    """
    if (1.0 - h.beta1) > math.sqrt(1.0 - h.beta2):
        return h.alpha * (1.0 - h.beta1) / math.sqrt(1.0 - h.beta2)
    return h.alpha


# ---------------------------------------------------------------------------
# AdaMax


def adamax_step(
    state: AdaMaxState, theta: np.ndarray, g: np.ndarray, h: HyperParams
) -> StepReport:
    """One AdaMax update: infinity-norm accumulator instead of sqrt(v_hat).

    u_t = max(beta2*u_{t-1}, |g_t|) elementwise; epsilon is unused because u
    only vanishes where every gradient so far was zero (0/0 -> 0 convention).
    """
    _check_step_inputs(state.m, theta, g)
    t = state.t + 1
    state.m = h.beta1 * state.m + (1.0 - h.beta1) * g
    state.u = np.maximum(h.beta2 * state.u, np.abs(g))
    state.t = t
    alpha_t = stepsize_at(h, t) / (1.0 - h.beta1**t)
    delta = alpha_t * _safe_div(state.m, state.u)
    return _finish(theta, delta, state.m / (1.0 - h.beta1**t), state.u.copy())


def adamax_u_closed_form(gs: Sequence[np.ndarray], beta2: float) -> np.ndarray:
    """u_t = max_i beta2**(t-i) * |g_i|, computed directly as the oracle."""
    if len(gs) == 0:
        raise EmptySequence("need at least one gradient")
    t = len(gs)
    stacked = np.stack([beta2 ** (t - i) * np.abs(g) for i, g in enumerate(gs, start=1)])
    return np.max(stacked, axis=0)


def lp_generalized_u(gs: Sequence[np.ndarray], beta2: float, p: int) -> np.ndarray:
    """The L^p-norm accumulator whose p -> inf limit is the AdaMax u.

    Returns v_t**(1/p) with v_t = (1-beta2**p) * sum_i beta2**(p*(t-i))*|g_i|**p,
    evaluated with the largest term factored out so the powers never overflow
    for finite inputs.
    """
    if len(gs) == 0:
        raise EmptySequence("need at least one gradient")
    if p < 1:
        raise RangeError("p", f"must be an integer >= 1, got {p}")
    t = len(gs)
    terms = np.stack([beta2 ** (t - i) * np.abs(g) for i, g in enumerate(gs, start=1)])
    peak = np.max(terms, axis=0)
    scaled = np.divide(terms, peak, out=np.zeros_like(terms), where=peak > 0)
    power_sum = np.sum(scaled**p, axis=0)
    result = peak * (1.0 - beta2**p) ** (1.0 / p) * power_sum ** (1.0 / p)
    if not np.all(np.isfinite(result)):
        raise OverflowError("L^p accumulator overflowed; use a smaller p")
    return result


# ---------------------------------------------------------------------------
# Baselines


def baseline_step(
    state: BaselineState, theta: np.ndarray, g: np.ndarray, h: HyperParams
) -> StepReport:
    """One update of the selected textbook baseline rule.

    adagrad:          accum += g**2;            delta = alpha_t*g/(sqrt(accum)+eps)
    rmsprop:          accum = b2*accum+(1-b2)g**2; same scaling, no correction
    rmsprop_momentum: velocity on the rescaled gradient, delta = alpha_t*buf
    sgd_momentum:     buf = rho*buf + g;        delta = alpha_t*buf
    sgd_nesterov:     buf = rho*buf + g;        delta = alpha_t*(g + rho*buf)
    """
    _check_step_inputs(state.accum, theta, g)
    t = state.t + 1
    state.t = t
    alpha_t = stepsize_at(h, t)
    if state.variant == "adagrad":
        state.accum = state.accum + g * g
        scaled = _safe_div(g, np.sqrt(state.accum) + h.epsilon)
        delta = alpha_t * scaled
        return _finish(theta, delta, g.copy(), state.accum.copy())
    if state.variant == "rmsprop":
        state.accum = h.beta2 * state.accum + (1.0 - h.beta2) * g * g
        scaled = _safe_div(g, np.sqrt(state.accum) + h.epsilon)
        delta = alpha_t * scaled
        return _finish(theta, delta, g.copy(), state.accum.copy())
    if state.variant == "rmsprop_momentum":
        state.accum = h.beta2 * state.accum + (1.0 - h.beta2) * g * g
        scaled = _safe_div(g, np.sqrt(state.accum) + h.epsilon)
        state.momentum_buf = state.rho * state.momentum_buf + scaled
        delta = alpha_t * state.momentum_buf
        return _finish(theta, delta, state.momentum_buf.copy(), state.accum.copy())
    if state.variant == "sgd_momentum":
        state.momentum_buf = state.rho * state.momentum_buf + g
        delta = alpha_t * state.momentum_buf
        return _finish(theta, delta, state.momentum_buf.copy(), state.accum.copy())
    # sgd_nesterov: lookahead form, evaluates the step at theta + rho*buf
    state.momentum_buf = state.rho * state.momentum_buf + g
    delta = alpha_t * (g + state.rho * state.momentum_buf)
    return _finish(theta, delta, state.momentum_buf.copy(), state.accum.copy())


# ---------------------------------------------------------------------------
# Learner facade (one step() call regardless of rule; used by the harness/CLI)

LEARNER_NAMES: tuple[str, ...] = (
    "adam",
    "adamax",
) + BASELINE_VARIANTS


class Learner:
    """An optimizer state bound to its update rule and hyperparameters."""

    def __init__(
        self,
        name: str,
        state: AdamState | AdaMaxState | BaselineState,
        h: HyperParams,
        step_fn: Callable[..., StepReport],
    ):
        self.name = name
        self.state = state
        self.h = h
        self._step_fn = step_fn

    @property
    def t(self) -> int:
        return self.state.t

    def step(self, theta: np.ndarray, g: np.ndarray) -> StepReport:
        return self._step_fn(self.state, theta, g, self.h)


def make_learner(
    name: str,
    dim: int,
    h: HyperParams,
    *,
    rho: float = 0.9,
    bias_correction: bool = True,
) -> Learner:
    """Build a zero-initialized learner for any supported rule name."""
    if name == "adam":
        if bias_correction:
            return Learner(name, AdamState.zeros(dim), h, adam_step)

        def uncorrected(state, theta, g, hp):
            return adam_step(state, theta, g, hp, bias_correction=False)

        return Learner("adam_uncorrected", AdamState.zeros(dim), h, uncorrected)
    if name == "adamax":
        return Learner(name, AdaMaxState.zeros(dim), h, adamax_step)
    if name in BASELINE_VARIANTS:
        return Learner(name, BaselineState.zeros(name, dim, rho=rho), h, baseline_step)
    raise RangeError("optimizer", f"unknown optimizer {name!r}")
