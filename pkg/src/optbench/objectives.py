"""Stochastic objectives and their data plumbing: quadratics with controlled
noise, L2-regularized multinomial logistic regression, a synthetic sparse
bag-of-words dataset with a planted labeling model, minibatch sampling with
optional input-feature dropout, a sparse text-format reader, and a
finite-difference gradient checker.

An Objective is deterministic given (theta, batch): all randomness lives in
dataset construction and batch sampling, so any evaluation can be replayed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .core import (
    BatchTooLarge,
    EmptyBatch,
    EmptyDataset,
    ParseError,
    RangeError,
    SeededRng,
    SparseGradient,
    as_vector,
    densify,
)

__all__ = [
    "Batch",
    "Objective",
    "Dataset",
    "BatchSampler",
    "make_quadratic",
    "make_logreg",
    "make_sparse_bow",
    "read_sparse_dataset",
    "sample_indices",
    "sample_batch",
    "check_gradient",
]


# ---------------------------------------------------------------------------
# Batches and the objective facade


@dataclass(frozen=True)
class Batch:
    """Example indices plus optional per-example feature overrides.

    features[k], when present, replaces the dataset row at indices[k]; that is
    how dropout-masked rows reach the objective without touching the dataset.
    """

    indices: np.ndarray
    features: tuple[SparseGradient, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64))
        if self.features is not None and len(self.features) != len(self.indices):
            raise RangeError("features", "must align one-to-one with indices")

    def __len__(self) -> int:
        return int(self.indices.shape[0])


class Objective:
    """A stochastic differentiable cost over a finite set of realizations.

    eval/grad see one batch; full_eval is the deterministic whole-dataset
    loss. The stochastic gradient averaged over a disjoint partition of all n
    realizations equals the full gradient (the partition-mean contract).
    """

    def __init__(
        self,
        *,
        kind: str,
        dim: int,
        n: int,
        convex: bool,
        eval_fn: Callable[[np.ndarray, Batch], float],
        grad_fn: Callable[[np.ndarray, Batch], np.ndarray],
        full_eval_fn: Callable[[np.ndarray], float],
        weighted_eval_fn: Callable[[np.ndarray, np.ndarray, int], float] | None = None,
        weighted_grad_fn: Callable[[np.ndarray, np.ndarray, int], np.ndarray] | None = None,
    ):
        self.kind = kind
        self.dim = dim
        self.n = n
        self.convex = convex
        self._eval_fn = eval_fn
        self._grad_fn = grad_fn
        self._full_eval_fn = full_eval_fn
        # Optional fast path for sum_{t<=tau} f_t as one weighted dataset
        # pass: (theta, per-example weights, tau). The regret harness uses it.
        self.weighted_eval = weighted_eval_fn
        self.weighted_grad = weighted_grad_fn

    def eval(self, theta: np.ndarray, batch: Batch) -> float:
        if len(batch) == 0:
            raise EmptyBatch("batch contains no examples")
        return float(self._eval_fn(theta, batch))

    def grad(self, theta: np.ndarray, batch: Batch) -> np.ndarray:
        if len(batch) == 0:
            raise EmptyBatch("batch contains no examples")
        return self._grad_fn(theta, batch)

    def full_eval(self, theta: np.ndarray) -> float:
        return float(self._full_eval_fn(theta))

    def all_indices(self) -> Batch:
        return Batch(indices=np.arange(self.n, dtype=np.int64))


# ---------------------------------------------------------------------------
# Quadratic test problem


def make_quadratic(
    dim: int,
    condition_number: float = 1.0,
    noise_std: float = 0.0,
    rng: SeededRng | None = None,
    *,
    n: int = 256,
    theta_star: np.ndarray | None = None,
) -> Objective:
    """f(theta) = 1/2 (theta-theta*)' D (theta-theta*) with diagonal D.

    D is log-spaced so max(D)/min(D) == condition_number. Stochasticity comes
    from n pre-drawn linear tilts: realization i is f(theta) + eta_i'theta
    with the eta_i centered to sum to zero, so each realization is convex,
    and the mean over any partition of all realizations recovers f exactly.
    """
    if dim < 1:
        raise RangeError("dim", f"must be >= 1, got {dim}")
    if condition_number < 1.0:
        raise RangeError("condition_number", f"must be >= 1, got {condition_number}")
    if noise_std < 0.0:
        raise RangeError("noise_std", f"must be >= 0, got {noise_std}")
    if n < 1:
        raise RangeError("n", f"must be >= 1, got {n}")
    if noise_std > 0.0 and rng is None:
        raise RangeError("rng", "required when noise_std > 0")

    diag = np.geomspace(1.0, condition_number, dim) if dim > 1 else np.ones(1)
    star = np.zeros(dim) if theta_star is None else as_vector(theta_star, name="theta_star")
    if star.shape[0] != dim:
        raise RangeError("theta_star", f"length {star.shape[0]} != dim {dim}")
    if noise_std > 0.0:
        eta = rng.normal(0.0, noise_std, (n, dim))
        eta -= eta.mean(axis=0)
    else:
        eta = np.zeros((n, dim))

    def base(theta: np.ndarray) -> float:
        r = theta - star
        return 0.5 * float(r @ (diag * r))

    def eval_fn(theta: np.ndarray, batch: Batch) -> float:
        tilt = eta[batch.indices].mean(axis=0)
        return base(theta) + float(tilt @ theta)

    def grad_fn(theta: np.ndarray, batch: Batch) -> np.ndarray:
        tilt = eta[batch.indices].mean(axis=0)
        return diag * (theta - star) + tilt

    def full_eval_fn(theta: np.ndarray) -> float:
        return base(theta) + float(eta.mean(axis=0) @ theta)

    def weighted_eval_fn(theta: np.ndarray, w: np.ndarray, t_count: int) -> float:
        return float(w.sum()) * base(theta) + float((w @ eta) @ theta)

    def weighted_grad_fn(theta: np.ndarray, w: np.ndarray, t_count: int) -> np.ndarray:
        return float(w.sum()) * (diag * (theta - star)) + w @ eta

    return Objective(
        kind="quadratic",
        dim=dim,
        n=n,
        convex=True,
        eval_fn=eval_fn,
        grad_fn=grad_fn,
        full_eval_fn=full_eval_fn,
        weighted_eval_fn=weighted_eval_fn,
        weighted_grad_fn=weighted_grad_fn,
    )


# ---------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True)
class Dataset:
    """Sparse feature rows with integer class labels."""

    features: tuple[SparseGradient, ...]
    labels: np.ndarray
    n: int
    p: int
    K: int

    def __post_init__(self):
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.n < 1 or self.p < 1 or self.K < 1:
            raise RangeError("dataset", f"n={self.n}, p={self.p}, K={self.K} must be positive")
        if len(self.features) != self.n or self.labels.shape[0] != self.n:
            raise RangeError("dataset", "features/labels length != n")
        if self.labels.min() < 0 or self.labels.max() >= self.K:
            raise RangeError("labels", f"must lie in [0, {self.K})")
        for row in self.features:
            if row.entries and row.entries[-1][0] >= self.p:
                raise IndexError(f"feature index {row.entries[-1][0]} >= p={self.p}")

    def dense_features(self) -> np.ndarray:
        """The n x p dense matrix; desk-scale datasets afford this."""
        out = np.zeros((self.n, self.p))
        for r, row in enumerate(self.features):
            for i, v in row.entries:
                out[r, i] = v
        return out


def make_sparse_bow(
    n: int, p: int, K: int, density: float, rng: SeededRng
) -> Dataset:
    """Synthetic sparse bag-of-words rows with a planted, learnable labeling.

    Each row activates round(density*p) distinct features drawn from a
    Zipf-like popularity law (exponent 1.1), so a long tail of features is
    rare. Labels are sampled from the softmax of a planted linear model via
    the Gumbel-max trick, which keeps the problem learnable but not separable.
    """
    if not (0.0 < density <= 1.0):
        raise RangeError("density", f"must lie in (0, 1], got {density}")
    k_active = int(round(density * p))
    if k_active < 1:
        raise RangeError("density", f"density*p = {density * p:.3g} must be >= 1")
    if K < 2:
        raise RangeError("K", f"must be >= 2, got {K}")

    popularity = (np.arange(1, p + 1, dtype=np.float64)) ** -1.1
    popularity /= popularity.sum()
    planted = rng.child("planted").normal(0.0, 1.0, (K, p))
    row_rng = rng.child("rows")
    label_rng = rng.child("labels")

    rows = []
    labels = np.empty(n, dtype=np.int64)
    for r in range(n):
        active = np.sort(row_rng.choice(p, size=k_active, replace=False, p=popularity))
        rows.append(SparseGradient(dim=p, entries=tuple((int(i), 1.0) for i in active)))
        scores = planted[:, active].sum(axis=1)
        labels[r] = int(np.argmax(scores + label_rng.gumbel(0.0, 1.0, K)))
    return Dataset(features=tuple(rows), labels=labels, n=n, p=p, K=K)


def read_sparse_dataset(path) -> Dataset:
    """Parse the sparse text format: one example per line, 'label idx:val ...'.

    Indices are 1-based in the file and converted to 0-based. An optional
    first line '#dim P' pins the feature dimension; otherwise it is the
    largest index seen. Labels must be non-negative integers; K becomes
    max(label)+1.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().split("\n")

    p_declared: int | None = None
    start = 0
    if lines and lines[0].startswith("#dim"):
        parts = lines[0].split()
        if len(parts) != 2:
            raise ParseError("malformed #dim directive", line=1)
        try:
            p_declared = int(parts[1])
        except ValueError:
            raise ParseError(f"bad dimension {parts[1]!r}", line=1) from None
        if p_declared < 1:
            raise ParseError(f"dimension must be positive, got {p_declared}", line=1)
        start = 1

    rows: list[list[tuple[int, float]]] = []
    labels: list[int] = []
    max_index = 0
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        tokens = line.split()
        try:
            label = int(tokens[0])
        except ValueError:
            raise ParseError(f"bad label {tokens[0]!r}", line=lineno) from None
        if label < 0:
            raise ParseError(f"label must be >= 0, got {label}", line=lineno)
        entries: list[tuple[int, float]] = []
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(f"expected idx:val, got {tok!r}", line=lineno)
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"bad idx:val pair {tok!r}", line=lineno) from None
            if idx < 1:
                raise IndexError(f"line {lineno}: index {idx} < 1 (indices are 1-based)")
            if p_declared is not None and idx > p_declared:
                raise ParseError(f"index {idx} exceeds declared dim {p_declared}", line=lineno)
            entries.append((idx - 1, val))
        entries.sort()
        for a, b in zip(entries, entries[1:]):
            if a[0] == b[0]:
                raise ParseError(f"duplicate index {a[0] + 1}", line=lineno)
        if entries:
            max_index = max(max_index, entries[-1][0] + 1)
        rows.append(entries)
        labels.append(label)

    if not rows:
        raise EmptyDataset(f"no examples in {path}")
    p = p_declared if p_declared is not None else max_index
    if p < 1:
        raise EmptyDataset(f"no features and no #dim directive in {path}")
    features = tuple(SparseGradient(dim=p, entries=tuple(e)) for e in rows)
    lab = np.asarray(labels, dtype=np.int64)
    return Dataset(features=features, labels=lab, n=len(rows), p=p, K=int(lab.max()) + 1)


# ---------------------------------------------------------------------------
# Logistic regression


def make_logreg(data: Dataset, l2: float = 0.0) -> Objective:
    """Multinomial logistic loss (mean over the batch) + (l2/2)*||theta||^2.

    Parameters are K weight vectors of length p, flattened row-major to
    dim = K*p; no pinned reference class (the L2 term makes the optimum
    unique for l2 > 0).
    """
    if data.K < 2:
        raise RangeError("K", f"logistic regression needs K >= 2, got {data.K}")
    if l2 < 0.0:
        raise RangeError("l2", f"must be >= 0, got {l2}")
    p, K = data.p, data.K
    X = data.dense_features()
    y = data.labels

    def rows_for(batch: Batch) -> np.ndarray:
        if batch.features is None:
            return X[batch.indices]
        return np.stack([densify(f) for f in batch.features])

    def scores_to_loss(scores: np.ndarray, lab: np.ndarray) -> float:
        shifted = scores - scores.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1)) + scores.max(axis=1)
        return float(np.mean(logz - scores[np.arange(len(lab)), lab]))

    def eval_fn(theta: np.ndarray, batch: Batch) -> float:
        W = theta.reshape(K, p)
        scores = rows_for(batch) @ W.T
        return scores_to_loss(scores, y[batch.indices]) + 0.5 * l2 * float(theta @ theta)

    def grad_fn(theta: np.ndarray, batch: Batch) -> np.ndarray:
        W = theta.reshape(K, p)
        rows = rows_for(batch)
        lab = y[batch.indices]
        scores = rows @ W.T
        shifted = scores - scores.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(len(lab)), lab] -= 1.0
        grad_w = probs.T @ rows / len(lab) + l2 * W
        return grad_w.reshape(-1)

    def full_eval_fn(theta: np.ndarray) -> float:
        W = theta.reshape(K, p)
        scores = X @ W.T
        return scores_to_loss(scores, y) + 0.5 * l2 * float(theta @ theta)

    def per_example_ce(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        W = theta.reshape(K, p)
        scores = X @ W.T
        shifted = scores - scores.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1)) + scores.max(axis=1)
        ce = logz - scores[np.arange(data.n), y]
        return ce, probs

    def weighted_eval_fn(theta: np.ndarray, w: np.ndarray, t_count: int) -> float:
        ce, _ = per_example_ce(theta)
        return float(w @ ce) + t_count * 0.5 * l2 * float(theta @ theta)

    def weighted_grad_fn(theta: np.ndarray, w: np.ndarray, t_count: int) -> np.ndarray:
        W = theta.reshape(K, p)
        _, probs = per_example_ce(theta)
        probs[np.arange(data.n), y] -= 1.0
        grad_w = (probs * w[:, None]).T @ X + t_count * l2 * W
        return grad_w.reshape(-1)

    return Objective(
        kind="logreg",
        dim=p * K,
        n=data.n,
        convex=True,
        eval_fn=eval_fn,
        grad_fn=grad_fn,
        full_eval_fn=full_eval_fn,
        weighted_eval_fn=weighted_eval_fn,
        weighted_grad_fn=weighted_grad_fn,
    )


# ---------------------------------------------------------------------------
# Batch sampling


@dataclass
class BatchSampler:
    """Deterministic minibatch index/dropout source.

    All draws are functions of (rng.seed, t) through named child streams, so
    sample_batch(sampler, data, t) can be replayed for any t in any order.
    """

    rng: SeededRng
    batch_size: int
    policy: Literal["shuffle_each_epoch", "iid_with_replacement"] = "shuffle_each_epoch"
    dropout_p: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise RangeError("batch_size", f"must be >= 1, got {self.batch_size}")
        if self.policy not in ("shuffle_each_epoch", "iid_with_replacement"):
            raise RangeError("policy", f"unknown policy {self.policy!r}")
        if not (0.0 <= self.dropout_p < 1.0):
            raise RangeError("dropout_p", f"must lie in [0, 1), got {self.dropout_p}")


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def sample_indices(sampler: BatchSampler, n: int, t: int) -> np.ndarray:
    """Example indices for step t (1-based) under the sampler's policy.

    shuffle_each_epoch walks a per-epoch permutation in batch_size slices
    (the last slice of an epoch may be short), so every example appears
    exactly once per epoch; iid_with_replacement draws fresh uniform indices.
    """
    B = sampler.batch_size
    if sampler.policy == "iid_with_replacement":
        return sampler.rng.child("batch", t).integers(0, n, B)
    if B > n:
        raise BatchTooLarge(f"batch_size {B} > dataset size {n}")
    spe = steps_per_epoch(n, B)
    epoch, pos = divmod(t - 1, spe)
    perm = sampler.rng.child("epoch", epoch).permutation(n)
    return perm[pos * B : (pos + 1) * B]


def sample_batch(sampler: BatchSampler, data: Dataset, t: int) -> Batch:
    """Indices for step t plus dropout-masked feature rows when dropout_p > 0.

    Inverted dropout: each active feature is zeroed independently with
    probability dropout_p and survivors are scaled by 1/(1-dropout_p), so the
    expected feature mass is unchanged.
    """
    indices = sample_indices(sampler, data.n, t)
    if sampler.dropout_p == 0.0:
        return Batch(indices=indices)
    keep_scale = 1.0 / (1.0 - sampler.dropout_p)
    mask_rng = sampler.rng.child("dropout", t)
    masked = []
    for idx in indices:
        row = data.features[int(idx)]
        keep = mask_rng.random(len(row.entries)) >= sampler.dropout_p
        entries = tuple(
            (i, v * keep_scale) for (i, v), k in zip(row.entries, keep) if k
        )
        masked.append(SparseGradient(dim=row.dim, entries=entries))
    return Batch(indices=indices, features=tuple(masked))


# ---------------------------------------------------------------------------
# Finite-difference gradient checking


def check_gradient(
    obj: Objective,
    theta: np.ndarray,
    batch: Batch,
    h_fd: float = 1e-5,
    *,
    rng: SeededRng | None = None,
    max_coords: int = 32,
) -> float:
    """Max relative error of analytic vs central-difference derivatives.

    Checks every coordinate when dim <= max_coords, else a random subset of
    max_coords coordinates. The relative error uses max(1, |analytic|) as the
    denominator. Too-small h_fd enters the cancellation regime; 1e-5 is the
    sweet spot for 64-bit arithmetic.
    """
    if h_fd <= 0.0:
        raise RangeError("h_fd", f"must be > 0, got {h_fd}")
    analytic = obj.grad(theta, batch)
    d = obj.dim
    if d <= max_coords:
        coords = np.arange(d)
    else:
        coords = (rng or SeededRng(0)).child("fd_coords").choice(d, size=max_coords, replace=False)
    worst = 0.0
    for i in coords:
        e = np.zeros(d)
        e[i] = h_fd
        fd = (obj.eval(theta + e, batch) - obj.eval(theta - e, batch)) / (2.0 * h_fd)
        rel = abs(fd - analytic[i]) / max(1.0, abs(analytic[i]))
        worst = max(worst, rel)
    return worst
