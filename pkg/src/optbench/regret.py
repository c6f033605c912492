"""Online convex optimization harness: run a learner against a sequence of
convex costs, measure cumulative regret against the best fixed comparator,
evaluate the three-term regret bound with observed constants, and fit the
average-regret decay slope.

The harness is unconstrained: there is no projection step, and the box spanned
by the realized iterates (extended with each horizon's comparator) serves as
the de facto feasible set from which the diameter constants are read off.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.optimize

from .core import (
    DegenerateRegret,
    GammaError,
    HyperParams,
    LambdaOne,
    NonConvexWarning,
    RangeError,
    gamma,
    hyperparams_validate,
    zeros,
)
from .objectives import Batch, BatchSampler, Objective, sample_indices
from .optim import Learner, bias_factor_description, make_learner

__all__ = [
    "OnlineSequence",
    "online_from_objective",
    "ComparatorResult",
    "solve_comparator",
    "CheckpointRecord",
    "RegretLedger",
    "run_online",
    "theorem1_bound",
    "DecayFit",
    "average_regret_decay",
    "default_checkpoints",
]


# ---------------------------------------------------------------------------
# Cost sequences


@dataclass
class OnlineSequence:
    """Convex costs f_1..f_T revealed one per round.

    cost/cost_grad take the 1-based round index. sum_cost/sum_grad, when
    provided, evaluate sum_{t<=horizon} f_t and its gradient in one shot (the
    comparator solver calls them every iteration, so a closed or weighted form
    pays off); the fallback loops over rounds.
    """

    T: int
    dim: int
    cost: Callable[[int, np.ndarray], float]
    cost_grad: Callable[[int, np.ndarray], np.ndarray]
    sum_cost: Callable[[int, np.ndarray], float] | None = None
    sum_grad: Callable[[int, np.ndarray], np.ndarray] | None = None

    def aggregate_cost(self, horizon: int, theta: np.ndarray) -> float:
        if self.sum_cost is not None:
            return self.sum_cost(horizon, theta)
        return sum(self.cost(t, theta) for t in range(1, horizon + 1))

    def aggregate_grad(self, horizon: int, theta: np.ndarray) -> np.ndarray:
        if self.sum_grad is not None:
            return self.sum_grad(horizon, theta)
        total = np.zeros(self.dim)
        for t in range(1, horizon + 1):
            total += self.cost_grad(t, theta)
        return total


def online_from_objective(
    obj: Objective, sampler: BatchSampler, T: int
) -> OnlineSequence:
    """Rounds are minibatch costs: f_t(theta) = obj.eval(theta, batch_t).

    Batch indices for every round are drawn up front (deterministically from
    the sampler), which also yields the per-example weight vector
    w_i(horizon) = sum_{t<=horizon, i in batch_t} 1/|batch_t| that turns the
    summed cost into one weighted dataset pass for the comparator solver.
    """
    if T < 1:
        raise RangeError("T", f"must be >= 1, got {T}")
    if sampler.dropout_p != 0.0:
        raise RangeError("dropout_p", "online sequences do not support dropout")
    batches = [Batch(indices=sample_indices(sampler, obj.n, t)) for t in range(1, T + 1)]
    weight_cache: dict[int, np.ndarray] = {}

    def weights(horizon: int) -> np.ndarray:
        if horizon not in weight_cache:
            w = np.zeros(obj.n)
            for b in batches[:horizon]:
                np.add.at(w, b.indices, 1.0 / len(b))
            weight_cache[horizon] = w
        return weight_cache[horizon]

    def cost(t: int, theta: np.ndarray) -> float:
        return obj.eval(theta, batches[t - 1])

    def cost_grad(t: int, theta: np.ndarray) -> np.ndarray:
        return obj.grad(theta, batches[t - 1])

    sum_cost = sum_grad = None
    if obj.weighted_eval is not None and obj.weighted_grad is not None:

        def sum_cost(horizon: int, theta: np.ndarray) -> float:
            return obj.weighted_eval(theta, weights(horizon), horizon)

        def sum_grad(horizon: int, theta: np.ndarray) -> np.ndarray:
            return obj.weighted_grad(theta, weights(horizon), horizon)

    return OnlineSequence(
        T=T, dim=obj.dim, cost=cost, cost_grad=cost_grad,
        sum_cost=sum_cost, sum_grad=sum_grad,
    )


# ---------------------------------------------------------------------------
# Comparator


@dataclass(frozen=True)
class ComparatorResult:
    """Best fixed point for one horizon, with its optimality certificate."""

    theta: np.ndarray
    value: float
    grad_norm: float
    converged: bool
    iterations: int


def solve_comparator(
    seq: OnlineSequence,
    horizon: int,
    x0: np.ndarray | None = None,
    *,
    grad_tol: float = 1e-10,
    max_iters: int = 10**6,
) -> ComparatorResult:
    """argmin_theta sum_{t<=horizon} f_t(theta), full batch.

    Gradient descent with Armijo backtracking does the bulk of the work on
    the per-round mean cost (same minimizer as the sum, but tolerances stay
    horizon-independent); the returned value is the sum. Near the optimum the
    Armijo decrease sinks below float resolution, so when the line search
    stalls short of grad_tol the iterate is polished with bounded-memory
    L-BFGS restarts. converged reflects
    ||grad|| <= max(grad_tol, 1e-8*(1+||theta||)) at exit; when that
    certificate cannot be met the best iterate found is still returned with
    converged False.
    """
    scale = 1.0 / horizon

    def fval(x: np.ndarray) -> float:
        return scale * seq.aggregate_cost(horizon, x)

    def fgrad(x: np.ndarray) -> np.ndarray:
        return scale * seq.aggregate_grad(horizon, x)

    theta = zeros(seq.dim) if x0 is None else np.array(x0, dtype=np.float64)
    step = 1.0
    value = fval(theta)
    grad = fgrad(theta)
    gnorm = float(np.linalg.norm(grad))
    iters = 0

    # Armijo backtracking on f(theta - s*g) <= f - 1e-4*s*||g||^2. Once the
    # required decrease is unresolvable at float precision the test would
    # accept no-op steps, so that is detected and treated as a stall. Capped
    # well short of max_iters: on near-flat valleys first-order steps crawl,
    # and the remaining budget is better spent in the polish phase.
    armijo_cap = min(max_iters, 10_000)
    while gnorm > grad_tol and iters < armijo_cap:
        accepted = False
        stalled = False
        while step >= 1e-20:
            required = 1e-4 * step * gnorm * gnorm
            if required <= 4e-16 * (1.0 + abs(value)):
                stalled = True
                break
            candidate = theta - step * grad
            cand_value = fval(candidate)
            if cand_value <= value - required:
                accepted = True
                break
            step *= 0.5
        if stalled or not accepted:
            break
        theta = candidate
        value = cand_value
        grad = fgrad(theta)
        gnorm = float(np.linalg.norm(grad))
        step *= 2.0
        iters += 1

    # Polish: curvature-aware restarts certify gradient norms that first-order
    # line search cannot resolve below the float noise floor of f.
    if gnorm > grad_tol and iters < max_iters:
        pgtol = grad_tol / max(1.0, math.sqrt(seq.dim))
        for _ in range(3):
            res = scipy.optimize.minimize(
                lambda x: (fval(x), fgrad(x)),
                theta,
                jac=True,
                method="L-BFGS-B",
                options={
                    "maxiter": min(50_000, max_iters - iters),
                    "ftol": 1e-18,
                    "gtol": pgtol,
                    "maxcor": 20,
                },
            )
            iters += int(res.nit)
            cand = np.asarray(res.x, dtype=np.float64)
            cand_grad = fgrad(cand)
            cand_gnorm = float(np.linalg.norm(cand_grad))
            if cand_gnorm < gnorm:
                theta, grad, gnorm = cand, cand_grad, cand_gnorm
            if gnorm <= grad_tol or iters >= max_iters or res.nit == 0:
                break

    value = fval(theta)
    certified = gnorm <= max(grad_tol, 1e-8 * (1.0 + float(np.linalg.norm(theta))))
    return ComparatorResult(
        theta=theta,
        value=value / scale,
        grad_norm=gnorm,
        converged=certified,
        iterations=iters,
    )


# ---------------------------------------------------------------------------
# The ledger


@dataclass(frozen=True)
class CheckpointRecord:
    """Everything the bound evaluation needs, frozen at one horizon."""

    T: int
    regret: float
    learner_cost: float
    comparator_value: float
    theta_star: np.ndarray
    comparator_grad_norm: float
    comparator_converged: bool
    v_hat: np.ndarray
    gnorm_per_dim: np.ndarray
    G2: float
    G_inf: float
    D: float
    D_inf: float

    @property
    def avg_regret(self) -> float:
        return self.regret / self.T


@dataclass
class RegretLedger:
    """Per-step costs plus frozen per-horizon records of observed constants.

    gnorm_per_dim is ||g_{1:T,i}||_2 maintained incrementally from running
    per-coordinate sums of squares; D_inf comes from the running coordinate
    min/max box and D from that box's diagonal (an upper bound on any pairwise
    iterate/comparator distance, so using it can only loosen the bound check).
    """

    T: int
    dim: int
    h: HyperParams
    learner_name: str
    step_costs: np.ndarray
    checkpoints: list[CheckpointRecord] = field(default_factory=list)
    bias_factor_form: str = ""

    def record_for(self, horizon: int) -> CheckpointRecord:
        for rec in self.checkpoints:
            if rec.T == horizon:
                return rec
        raise RangeError("horizon", f"no checkpoint at T={horizon}")

    def decay_pairs(self) -> list[tuple[int, float]]:
        return [(rec.T, rec.regret) for rec in self.checkpoints]


def default_checkpoints(T: int, first: int = 32) -> list[int]:
    """Powers of two in [first, T], plus T itself."""
    cps = [2**k for k in range(int(math.log2(first)), int(math.log2(T)) + 1) if 2**k >= first and 2**k <= T]
    if not cps or cps[-1] != T:
        cps.append(T)
    return cps


# ---------------------------------------------------------------------------
# The harness


def run_online(
    seq: OnlineSequence,
    learner: Learner | str,
    h: HyperParams | None = None,
    *,
    theta0: np.ndarray | None = None,
    checkpoints: Sequence[int] | None = None,
    convexity_checks: bool = True,
) -> RegretLedger:
    """Predict, reveal the cost, observe its gradient, step; ledger everything.

    The hyperparameters must pass regret-mode validation (inv_sqrt_t stepsize,
    exponentially decayed beta1, gamma < 1). At each checkpoint horizon the
    best fixed comparator is solved afresh and the regret R(T) recorded
    against it; the observed-constant snapshot for the bound is frozen at the
    same moment.
    """
    if isinstance(learner, str):
        if h is None:
            raise RangeError("h", "hyperparameters are required with a learner name")
        learner = make_learner(learner, seq.dim, h)
    h = learner.h
    hyperparams_validate(h, regret_mode=True)
    cps = sorted(set(default_checkpoints(seq.T) if checkpoints is None else checkpoints))
    if cps and (cps[0] < 1 or cps[-1] > seq.T):
        raise RangeError("checkpoints", f"must lie in [1, {seq.T}]")

    theta = zeros(seq.dim) if theta0 is None else np.array(theta0, dtype=np.float64)
    box_min = theta.copy()
    box_max = theta.copy()
    sumsq_g = np.zeros(seq.dim)
    G2 = 0.0
    G_inf = 0.0
    step_costs = np.zeros(seq.T)
    records: list[CheckpointRecord] = []
    snapshots: list[tuple[int, np.ndarray]] = []
    snapshot_at = {1, max(1, seq.T // 2), seq.T}
    comparator_guess: np.ndarray | None = None

    for t in range(1, seq.T + 1):
        np.minimum(box_min, theta, out=box_min)
        np.maximum(box_max, theta, out=box_max)
        if t in snapshot_at:
            snapshots.append((t, theta.copy()))
        step_costs[t - 1] = seq.cost(t, theta)
        g = seq.cost_grad(t, theta)
        sumsq_g += g * g
        G2 = max(G2, float(np.linalg.norm(g)))
        G_inf = max(G_inf, float(np.max(np.abs(g))) if g.size else 0.0)
        report = learner.step(theta, g)
        theta = report.theta_next

        if t in cps:
            comp = solve_comparator(seq, t, x0=comparator_guess)
            comparator_guess = comp.theta
            np.minimum(box_min, comp.theta, out=box_min)
            np.maximum(box_max, comp.theta, out=box_max)
            widths = box_max - box_min
            learner_cost = float(step_costs[:t].sum())
            records.append(
                CheckpointRecord(
                    T=t,
                    regret=learner_cost - comp.value,
                    learner_cost=learner_cost,
                    comparator_value=comp.value,
                    theta_star=comp.theta,
                    comparator_grad_norm=comp.grad_norm,
                    comparator_converged=comp.converged,
                    v_hat=np.array(report.v_hat_or_u, dtype=np.float64),
                    gnorm_per_dim=np.sqrt(sumsq_g),
                    G2=G2,
                    G_inf=G_inf,
                    D=float(np.linalg.norm(widths)),
                    D_inf=float(np.max(widths)) if widths.size else 0.0,
                )
            )

    if convexity_checks and len(snapshots) >= 2:
        _spot_check_convexity(seq, snapshots)

    return RegretLedger(
        T=seq.T,
        dim=seq.dim,
        h=h,
        learner_name=learner.name,
        step_costs=step_costs,
        checkpoints=records,
        bias_factor_form=bias_factor_description(h),
    )


def _spot_check_convexity(seq: OnlineSequence, snapshots: list[tuple[int, np.ndarray]]) -> None:
    """Midpoint test f((a+b)/2) <= (f(a)+f(b))/2 on a few stored iterates."""
    for (t, a), (_, b) in zip(snapshots, snapshots[1:]):
        fa = seq.cost(t, a)
        fb = seq.cost(t, b)
        fm = seq.cost(t, 0.5 * (a + b))
        slack = 1e-9 * (1.0 + abs(fa) + abs(fb))
        if fm > 0.5 * (fa + fb) + slack:
            warnings.warn(
                f"cost {t} failed the midpoint convexity check "
                f"(f(mid)={fm:.6g} > {(0.5 * (fa + fb)):.6g})",
                NonConvexWarning,
                stacklevel=3,
            )


# ---------------------------------------------------------------------------
# The bound and the decay fit


def theorem1_bound(
    ledger: RegretLedger, h: HyperParams, *, horizon: int | None = None
) -> tuple[float, dict[str, float]]:
    """Evaluate the three-term regret bound with the ledger's observed
    constants at the given horizon (default: the last checkpoint).

    term1 = D^2/(2*alpha*(1-beta1)) * sum_i sqrt(T * vhat_{T,i})
    term2 = alpha*(1+beta1)*G_inf / ((1-beta1)*sqrt(1-beta2)*(1-gamma)^2)
            * sum_i ||g_{1:T,i}||_2
    term3 = d * D_inf^2 * G_inf * sqrt(1-beta2) / (2*alpha*(1-beta1)*(1-lam)^2)

    Undefined at lam = 1 (term3 divides by (1-lam)^2): raises LambdaOne.
    """
    if h.lam == 1.0:
        raise LambdaOne("the bound's third term requires lam < 1")
    gam = gamma(h)
    if not gam < 1.0:
        raise GammaError(f"bound requires beta1**2/sqrt(beta2) < 1, got {gam:.6g}")
    rec = ledger.checkpoints[-1] if horizon is None else ledger.record_for(horizon)
    a, b1, b2 = h.alpha, h.beta1, h.beta2
    term1 = rec.D**2 / (2.0 * a * (1.0 - b1)) * float(np.sum(np.sqrt(rec.T * rec.v_hat)))
    term2 = (
        a * (1.0 + b1) * rec.G_inf
        / ((1.0 - b1) * math.sqrt(1.0 - b2) * (1.0 - gam) ** 2)
        * float(np.sum(rec.gnorm_per_dim))
    )
    term3 = (
        ledger.dim * rec.D_inf**2 * rec.G_inf * math.sqrt(1.0 - b2)
        / (2.0 * a * (1.0 - b1) * (1.0 - h.lam) ** 2)
    )
    terms = {"term1": term1, "term2": term2, "term3": term3}
    return term1 + term2 + term3, terms


@dataclass(frozen=True)
class DecayFit:
    """Least-squares fit of log(R(T)/T) against log T."""

    slope: float
    intercept: float
    used: tuple[tuple[int, float], ...]
    excluded: tuple[int, ...]


def average_regret_decay(pairs: Sequence[tuple[int, float]]) -> DecayFit:
    """Fit the average-regret decay exponent from (T, R(T)) checkpoints.

    Checkpoints with R(T) <= 0 carry no decay information on a log scale;
    they are excluded and reported. Fewer than 4 positive checkpoints raise
    DegenerateRegret. An O(1/sqrt(T)) decay shows up as slope ~ -0.5.
    """
    used = tuple((int(T), float(R)) for T, R in pairs if R > 0.0)
    excluded = tuple(int(T) for T, R in pairs if R <= 0.0)
    if len(used) < 4:
        raise DegenerateRegret(
            f"need >= 4 checkpoints with positive regret, got {len(used)}"
            + (f" (excluded T={list(excluded)})" if excluded else "")
        )
    x = np.log([T for T, _ in used])
    y = np.log([R / T for T, R in used])
    slope, intercept = np.polyfit(x, y, 1)
    return DecayFit(slope=float(slope), intercept=float(intercept), used=used, excluded=excluded)
