"""Foundational types: parameter vectors, sparse gradients, validated
hyperparameters, and deterministic counter-based randomness.

Everything downstream (optimizers, objectives, the regret harness, the CLI)
builds on these types; nothing here depends on any of them.

All arithmetic is 64-bit floating point. A "parameter vector" is a 1-D
float64 numpy array of fixed length; all vector operations are elementwise.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np

__all__ = [
    "OptbenchError",
    "ValidationError",
    "RangeError",
    "GammaError",
    "DimMismatch",
    "NonFiniteGradient",
    "ZeroSteps",
    "EmptySequence",
    "EmptyBatch",
    "EmptyDataset",
    "BatchTooLarge",
    "ParseError",
    "IoError",
    "LambdaOne",
    "DegenerateRegret",
    "NonConvexWarning",
    "ParamVector",
    "as_vector",
    "zeros",
    "check_same_dim",
    "ensure_finite_gradient",
    "SparseGradient",
    "densify",
    "sparsify",
    "HyperParams",
    "ADAM_DEFAULTS",
    "ADAMAX_DEFAULTS",
    "gamma",
    "hyperparams_validate",
    "SeededRng",
    "derive_seed",
]


# ---------------------------------------------------------------------------
# Errors


class OptbenchError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(OptbenchError, ValueError):
    """A value-level configuration problem (bad field value, bad combination)."""


class RangeError(ValidationError):
    """A hyperparameter or config field is outside its legal range."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class GammaError(ValidationError):
    """beta1**2 / sqrt(beta2) >= 1, which the regret guarantee disallows."""


class DimMismatch(OptbenchError, ValueError):
    """Vectors that must share a length do not."""


class NonFiniteGradient(OptbenchError, ValueError):
    """A gradient contains NaN or Inf."""


class ZeroSteps(OptbenchError, ValueError):
    """An operation that needs at least one completed step was called at t=0."""


class EmptySequence(OptbenchError, ValueError):
    """A gradient sequence that must be non-empty is empty."""


class EmptyBatch(OptbenchError, ValueError):
    """A batch that must contain at least one example is empty."""


class EmptyDataset(OptbenchError, ValueError):
    """A dataset source yielded no examples."""


class BatchTooLarge(OptbenchError, ValueError):
    """batch_size exceeds the dataset size under a without-replacement policy."""


class ParseError(OptbenchError, ValueError):
    """Malformed input text (dataset line or config key).

    Carries the 1-based line number or the offending key when known.
    """

    def __init__(self, message: str, *, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        prefix = ""
        if line is not None:
            prefix = f"line {line}: "
        elif key is not None:
            prefix = f"key {key!r}: "
        super().__init__(prefix + message)


class IoError(OptbenchError, OSError):
    """A trace or report file could not be written or read."""


class LambdaOne(OptbenchError, ValueError):
    """The regret bound's third term is undefined at lambda = 1."""


class DegenerateRegret(OptbenchError, ValueError):
    """Too few checkpoints with positive regret to fit a decay slope."""


class NonConvexWarning(UserWarning):
    """A convexity spot-check failed on a cost sequence that claims convexity."""


# ---------------------------------------------------------------------------
# Dense vectors

ParamVector = np.ndarray


def as_vector(values: Iterable[float] | np.ndarray, *, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float64 array; the universal numeric carrier."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise DimMismatch(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteGradient(f"{name} contains NaN or Inf")
    return v


def zeros(dim: int) -> np.ndarray:
    if dim < 1:
        raise RangeError("dim", f"must be a positive integer, got {dim}")
    return np.zeros(dim, dtype=np.float64)


def check_same_dim(*vectors: np.ndarray) -> int:
    """Return the shared length of the given vectors or raise DimMismatch."""
    dims = {v.shape[0] for v in vectors}
    if len(dims) != 1:
        raise DimMismatch(f"conflicting vector lengths {sorted(dims)}")
    return dims.pop()


def ensure_finite_gradient(g: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient("gradient contains NaN or Inf")
    return g


# ---------------------------------------------------------------------------
# Sparse gradients (transport only; optimizer state stays dense)


@dataclass(frozen=True)
class SparseGradient:
    """Sparse vector as (index, value) pairs with strictly increasing indices.

    A transport type: it carries sparse data (gradients, dataset rows) between
    components, and is densified before any optimizer sees it.
    """

    dim: int
    entries: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if self.dim < 1:
            raise RangeError("dim", f"must be a positive integer, got {self.dim}")
        object.__setattr__(
            self, "entries", tuple((int(i), float(v)) for i, v in self.entries)
        )
        prev = -1
        for i, v in self.entries:
            if i < 0:
                raise IndexError(f"negative index {i}")
            if i <= prev:
                raise ValidationError(
                    f"indices must be strictly increasing, got {i} after {prev}"
                )
            if not math.isfinite(v):
                raise NonFiniteGradient(f"entry at index {i} is not finite")
            prev = i


def densify(g: SparseGradient) -> np.ndarray:
    """Expand to a dense vector of length g.dim, zeros off the support."""
    out = np.zeros(g.dim, dtype=np.float64)
    for i, v in g.entries:
        if i >= g.dim:
            raise IndexError(f"index {i} out of range for dim {g.dim}")
        out[i] = v
    return out


def sparsify(v: np.ndarray) -> SparseGradient:
    """Keep the nonzero pattern of a dense vector; inverse of densify on it."""
    v = as_vector(v)
    idx = np.flatnonzero(v)
    return SparseGradient(dim=v.shape[0], entries=tuple((int(i), float(v[i])) for i in idx))


# ---------------------------------------------------------------------------
# Hyperparameters

AlphaSchedule = Literal["constant", "inv_sqrt_t"]
Beta1Schedule = Literal["constant", "exponential_decay"]


@dataclass(frozen=True)
class HyperParams:
    """Stepsize and moment-decay settings shared by all update rules.

    ``lam`` is the per-step decay rate of beta1 under the exponential_decay
    schedule (beta1_t = beta1 * lam**(t-1)); lam = 1 means no decay.
    """

    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lam: float = 1.0
    alpha_schedule: AlphaSchedule = "constant"
    beta1_schedule: Beta1Schedule = "constant"


ADAM_DEFAULTS = HyperParams()
ADAMAX_DEFAULTS = HyperParams(alpha=0.002, epsilon=0.0)


def gamma(h: HyperParams) -> float:
    """beta1**2 / sqrt(beta2); the regret guarantee requires this < 1."""
    if h.beta2 == 0.0:
        return math.inf
    return h.beta1**2 / math.sqrt(h.beta2)


def hyperparams_validate(h: HyperParams, regret_mode: bool = False) -> HyperParams:
    """Check all range invariants; in regret mode also the guarantee's extras.

    Regret mode enforces gamma < 1, alpha_schedule = inv_sqrt_t, and
    beta1_schedule = exponential_decay, which the average-regret guarantee
    assumes. Returns h unchanged on success.
    """
    if not (math.isfinite(h.alpha) and h.alpha > 0):
        raise RangeError("alpha", f"must be finite and > 0, got {h.alpha}")
    if not (0.0 <= h.beta1 < 1.0):
        raise RangeError("beta1", f"must lie in [0, 1), got {h.beta1}")
    if not (0.0 <= h.beta2 < 1.0):
        raise RangeError("beta2", f"must lie in [0, 1), got {h.beta2}")
    if not (math.isfinite(h.epsilon) and h.epsilon >= 0.0):
        raise RangeError("epsilon", f"must be finite and >= 0, got {h.epsilon}")
    if not (0.0 < h.lam <= 1.0):
        raise RangeError("lam", f"must lie in (0, 1], got {h.lam}")
    if h.alpha_schedule not in ("constant", "inv_sqrt_t"):
        raise RangeError("alpha_schedule", f"unknown schedule {h.alpha_schedule!r}")
    if h.beta1_schedule not in ("constant", "exponential_decay"):
        raise RangeError("beta1_schedule", f"unknown schedule {h.beta1_schedule!r}")
    if regret_mode:
        g = gamma(h)
        if not g < 1.0:
            raise GammaError(
                f"beta1**2/sqrt(beta2) = {g:.6g} >= 1 (beta1={h.beta1}, beta2={h.beta2})"
            )
        if h.alpha_schedule != "inv_sqrt_t":
            raise RangeError("alpha_schedule", "regret mode requires inv_sqrt_t")
        if h.beta1_schedule != "exponential_decay":
            raise RangeError("beta1_schedule", "regret mode requires exponential_decay")
    return h


# ---------------------------------------------------------------------------
# Deterministic randomness


def derive_seed(*labels: int | str) -> int:
    """Map labels to a stable 64-bit seed via sha256 of 'label1:label2:...'."""
    text = ":".join(str(x) for x in labels)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class SeededRng:
    """Deterministic RNG on numpy's counter-based Philox generator.

    Stream layout (stable contract): the Philox 128-bit key is the pair
    (seed, stream), both uint64. ``child(*labels)`` derives a new stream id as
    the first 8 bytes of sha256('parent_stream:label1:label2:...'), chaining
    the parent's stream so that differently-rooted substreams stay distinct
    even when their local label chains coincide (``child(a).child(x)`` must
    not collide with ``child(b).child(x)``). Substreams are reproducible from
    the root seed alone, and identical seed + identical call sequence gives
    identical output on every platform.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, *labels: int | str) -> "SeededRng":
        """A new independent stream named by the labels under this stream."""
        return SeededRng(self.seed, derive_seed(self.stream, *labels))

    # Thin pass-throughs; the set below is the package's entire RNG surface.
    def random(self, size=None):
        return self._gen.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        return self._gen.choice(a, size=size, replace=replace, p=p)

    def gumbel(self, loc=0.0, scale=1.0, size=None):
        return self._gen.gumbel(loc, scale, size)

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, stream={self.stream})"
