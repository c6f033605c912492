"""Experiment configuration: TOML schema, strict validation, grid expansion.

A config file fully determines a run — same file, same seed, same bytes out.
The schema (all unknown keys are errors, no silent typo tolerance):

    experiment = "train"        # train | compare | regret | ablation | checkgrad
    seed = 7                    # suite base seed (>= 0)
    seeds = [7, 8, 9]           # optional multi-seed suite; default [seed]
    output_dir = "runs/demo"    # optional here; the CLI --out flag overrides
    emit = "csv"                # csv | csv+gnuplot_dat
    figures = false             # also render PNG figures alongside the tables
    T = 1000                    # total steps — exactly one of T / epochs
    epochs = 5                  #   (regret requires T; ablation requires epochs)
    batch_size = 16
    record_every = 50           # optional; default records every epoch boundary
    probes = 20                 # checkgrad only: number of random probes
    threshold = 1e-5            # checkgrad only: max relative error allowed

    [objective]
    kind = "quadratic"          # quadratic | logreg
    dim = 10                    # quadratic: dimension
    condition_number = 10.0     # quadratic: curvature spread (>= 1)
    noise_std = 1.0             # quadratic: per-realization gradient noise
    n = 256                     # quadratic: number of realizations
    # logreg instead takes either a synthesis spec (n, p, K, density) or
    # path = "data.txt" in the sparse dataset format, plus l2 >= 0.

    [sampler]
    policy = "shuffle_each_epoch"   # or iid_with_replacement
    dropout_p = 0.0                 # logreg only; must be 0 for regret runs

    [[optimizer]]               # one or more; forbidden for ablation/checkgrad
    name = "adam"               # adam | adamax | adagrad | rmsprop |
                                # rmsprop_momentum | sgd_momentum | sgd_nesterov
    alpha = 0.001               # or a grid, one run per point:
    # alpha_grid = [1e-4, 1e-3, 1e-2, 1e-1]
    # alpha_grid = { min = 1e-4, max = 1e-1, points = 4 }   # log-spaced
    beta1 = 0.9
    beta2 = 0.999
    epsilon = 1e-8
    bias_correction = true      # adam only; false runs the uncorrected variant
    rho = 0.9                   # momentum baselines only
    lam = 1.0                   # beta1 decay base (regret default 1 - 1e-8)
    alpha_schedule = "constant" # or inv_sqrt_t (regret default)
    beta1_schedule = "constant" # or exponential_decay (regret default)

The ablation experiment carries its own built-in optimizer grid
(beta2 in {0.99, 0.999, 0.9999} x beta1 in {0, 0.9} x log10(alpha) in
{-5..-1} x bias correction on/off = 60 cells), so it takes no [[optimizer]]
tables; checkgrad probes the objective's gradients and takes none either.
"""
from __future__ import annotations

import dataclasses
import math
import os
import re
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np
import tomli

from .core import (
    ADAM_DEFAULTS,
    ADAMAX_DEFAULTS,
    HyperParams,
    ParseError,
    hyperparams_validate,
)
from .optim import BASELINE_VARIANTS, LEARNER_NAMES

__all__ = [
    "EXPERIMENTS",
    "EMIT_MODES",
    "ObjectiveSpec",
    "SamplerSpec",
    "OptimizerSpec",
    "RunConfig",
    "load_config",
    "parse_config",
    "expand_runs",
    "RunSpec",
]


EXPERIMENTS = ("train", "compare", "regret", "ablation", "checkgrad")
EMIT_MODES = ("csv", "csv+gnuplot_dat")

# Regret-mode defaults for keys the optimizer table leaves out: the decay
# schedules the bound analysis assumes, and a beta1 decay base close to 1.
_REGRET_DEFAULTS = {
    "lam": 1.0 - 1e-8,
    "alpha_schedule": "inv_sqrt_t",
    "beta1_schedule": "exponential_decay",
}


@dataclass(frozen=True)
class ObjectiveSpec:
    """What to build, with every parameter the builders accept."""

    kind: str
    dim: int | None = None
    condition_number: float = 1.0
    noise_std: float = 0.0
    n: int | None = None
    p: int | None = None
    K: int | None = None
    density: float | None = None
    l2: float = 0.0
    path: str | None = None


@dataclass(frozen=True)
class SamplerSpec:
    policy: str = "shuffle_each_epoch"
    dropout_p: float = 0.0


@dataclass(frozen=True)
class OptimizerSpec:
    """One optimizer table: a concrete HyperParams plus an optional alpha grid."""

    name: str
    h: HyperParams
    bias_correction: bool = True
    rho: float = 0.9
    alpha_grid: tuple[float, ...] = ()

    def concrete(self) -> tuple["OptimizerSpec", ...]:
        """One grid-free spec per alpha grid point (itself if no grid)."""
        if not self.alpha_grid:
            return (self,)
        return tuple(
            dataclasses.replace(
                self, h=dataclasses.replace(self.h, alpha=a), alpha_grid=()
            )
            for a in self.alpha_grid
        )


@dataclass(frozen=True)
class RunSpec:
    """One unit of work after grid and seed expansion."""

    run_id: int
    label: str
    optimizer: OptimizerSpec
    seed: int


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    seed: int
    seeds: tuple[int, ...]
    objective: ObjectiveSpec
    sampler: SamplerSpec
    optimizers: tuple[OptimizerSpec, ...]
    T: int | None = None
    epochs: int | None = None
    batch_size: int | None = None
    record_every: int | None = None
    probes: int = 20
    threshold: float = 1e-5
    output_dir: str | None = None
    emit: str = "csv"
    figures: bool = False
    raw: Mapping[str, Any] = dataclasses.field(default_factory=dict)


# ---------------------------------------------------------------------------
# Strict table readers


class _Table:
    """A TOML table with take-or-error key discipline."""

    def __init__(self, data: Mapping[str, Any], where: str):
        self.data = dict(data)
        self.where = where

    def take(self, key: str, types: type | tuple[type, ...], default: Any = ...) -> Any:
        if key not in self.data:
            if default is ...:
                raise ParseError(f"missing required key in {self.where}", key=key)
            return default
        value = self.data.pop(key)
        # bool is an int subclass; keep the two apart for schema clarity.
        if isinstance(value, bool) and bool not in _astuple(types):
            raise ParseError(f"{self.where}.{key} must be {_typename(types)}, got a boolean", key=key)
        if not isinstance(value, types):
            raise ParseError(
                f"{self.where}.{key} must be {_typename(types)}, got {type(value).__name__}",
                key=key,
            )
        return value

    def finish(self) -> None:
        if self.data:
            stray = sorted(self.data)[0]
            raise ParseError(f"unknown key in {self.where}", key=stray)


def _astuple(types: type | tuple[type, ...]) -> tuple[type, ...]:
    return types if isinstance(types, tuple) else (types,)


def _typename(types: type | tuple[type, ...]) -> str:
    return "/".join(t.__name__ for t in _astuple(types))


def _positive_int(table: _Table, key: str, default: Any = ...) -> int | None:
    value = table.take(key, int, default)
    if value is not None and value < 1:
        raise ParseError(f"{table.where}.{key} must be >= 1, got {value}", key=key)
    return value


# ---------------------------------------------------------------------------
# Section parsers


def _parse_objective(data: Mapping[str, Any], experiment: str) -> ObjectiveSpec:
    tb = _Table(data, "[objective]")
    kind = tb.take("kind", str)
    if kind == "quadratic":
        spec = ObjectiveSpec(
            kind=kind,
            dim=_positive_int(tb, "dim"),
            condition_number=float(tb.take("condition_number", (int, float), 1.0)),
            noise_std=float(tb.take("noise_std", (int, float), 0.0)),
            n=_positive_int(tb, "n", 256),
        )
        if spec.condition_number < 1.0:
            raise ParseError("[objective].condition_number must be >= 1", key="condition_number")
        if spec.noise_std < 0.0:
            raise ParseError("[objective].noise_std must be >= 0", key="noise_std")
    elif kind == "logreg":
        path = tb.take("path", str, None)
        l2 = float(tb.take("l2", (int, float), 0.0))
        if l2 < 0.0:
            raise ParseError("[objective].l2 must be >= 0", key="l2")
        if path is not None:
            spec = ObjectiveSpec(kind=kind, path=path, l2=l2)
        else:
            density = float(tb.take("density", (int, float)))
            if not 0.0 < density <= 1.0:
                raise ParseError("[objective].density must be in (0, 1]", key="density")
            spec = ObjectiveSpec(
                kind=kind,
                n=_positive_int(tb, "n"),
                p=_positive_int(tb, "p"),
                K=_positive_int(tb, "K"),
                density=density,
                l2=l2,
            )
            if spec.K < 2:
                raise ParseError("[objective].K must be >= 2", key="K")
    else:
        raise ParseError(f"unknown objective kind {kind!r}", key="kind")
    if experiment == "ablation" and kind != "logreg":
        raise ParseError("the ablation experiment runs on a logreg objective", key="kind")
    tb.finish()
    return spec


def _parse_sampler(data: Mapping[str, Any], objective: ObjectiveSpec, experiment: str) -> SamplerSpec:
    tb = _Table(data, "[sampler]")
    policy = tb.take("policy", str, "shuffle_each_epoch")
    if policy not in ("shuffle_each_epoch", "iid_with_replacement"):
        raise ParseError(f"unknown sampler policy {policy!r}", key="policy")
    dropout_p = float(tb.take("dropout_p", (int, float), 0.0))
    tb.finish()
    if not 0.0 <= dropout_p < 1.0:
        raise ParseError("[sampler].dropout_p must be in [0, 1)", key="dropout_p")
    if dropout_p > 0.0 and objective.kind != "logreg":
        raise ParseError("dropout applies to logreg features only", key="dropout_p")
    if dropout_p > 0.0 and experiment == "regret":
        raise ParseError("regret sequences must be dropout-free (costs would not be replayable)", key="dropout_p")
    return SamplerSpec(policy=policy, dropout_p=dropout_p)


def _parse_alpha_grid(value: Any) -> tuple[float, ...]:
    if isinstance(value, list):
        if not value or not all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in value):
            raise ParseError("alpha_grid list must be non-empty numbers", key="alpha_grid")
        grid = tuple(float(a) for a in value)
    elif isinstance(value, dict):
        tb = _Table(value, "alpha_grid")
        lo = float(tb.take("min", (int, float)))
        hi = float(tb.take("max", (int, float)))
        points = _positive_int(tb, "points")
        tb.finish()
        if not 0.0 < lo <= hi:
            raise ParseError("alpha_grid needs 0 < min <= max", key="alpha_grid")
        grid = tuple(float(a) for a in np.geomspace(lo, hi, points))
    else:
        raise ParseError("alpha_grid must be a list or a {min, max, points} table", key="alpha_grid")
    if any(a <= 0.0 for a in grid):
        raise ParseError("alpha_grid values must be > 0", key="alpha_grid")
    return grid


def _parse_optimizer(data: Mapping[str, Any], idx: int, experiment: str) -> OptimizerSpec:
    tb = _Table(data, f"[[optimizer]] #{idx + 1}")
    name = tb.take("name", str)
    if name not in LEARNER_NAMES:
        raise ParseError(f"unknown optimizer {name!r} (choose from {', '.join(LEARNER_NAMES)})", key="name")
    base = ADAMAX_DEFAULTS if name == "adamax" else ADAM_DEFAULTS

    grid_value = tb.data.pop("alpha_grid", None)
    alpha_grid = _parse_alpha_grid(grid_value) if grid_value is not None else ()
    alpha = tb.take("alpha", (int, float), None)
    if alpha is not None and alpha_grid:
        raise ParseError("give alpha or alpha_grid, not both", key="alpha")

    regret = experiment == "regret"

    def default(key: str, fallback: Any) -> Any:
        return _REGRET_DEFAULTS.get(key, fallback) if regret else fallback

    h = HyperParams(
        alpha=float(alpha) if alpha is not None else (alpha_grid[0] if alpha_grid else base.alpha),
        beta1=float(tb.take("beta1", (int, float), base.beta1)),
        beta2=float(tb.take("beta2", (int, float), base.beta2)),
        epsilon=float(tb.take("epsilon", (int, float), base.epsilon)),
        lam=float(tb.take("lam", (int, float), default("lam", base.lam))),
        alpha_schedule=tb.take("alpha_schedule", str, default("alpha_schedule", base.alpha_schedule)),
        beta1_schedule=tb.take("beta1_schedule", str, default("beta1_schedule", base.beta1_schedule)),
    )

    bias_correction = tb.take("bias_correction", bool, True)
    if not bias_correction and name != "adam":
        raise ParseError("bias_correction applies to adam only", key="bias_correction")
    rho_given = "rho" in tb.data
    rho = float(tb.take("rho", (int, float), 0.9))
    if rho_given and name not in BASELINE_VARIANTS:
        raise ParseError("rho applies to the baseline optimizers only", key="rho")
    if not 0.0 <= rho < 1.0:
        raise ParseError("rho must be in [0, 1)", key="rho")
    tb.finish()

    hyperparams_validate(h, regret_mode=regret)
    for a in alpha_grid:
        hyperparams_validate(dataclasses.replace(h, alpha=a), regret_mode=regret)
    return OptimizerSpec(name=name, h=h, bias_correction=bias_correction, rho=rho, alpha_grid=alpha_grid)


# ---------------------------------------------------------------------------
# Whole-file parsing


def parse_config(data: Mapping[str, Any]) -> RunConfig:
    """Validate a parsed TOML mapping into a RunConfig (strict keys)."""
    raw = {k: v for k, v in data.items()}
    tb = _Table(data, "config")
    experiment = tb.take("experiment", str)
    if experiment not in EXPERIMENTS:
        raise ParseError(f"unknown experiment {experiment!r} (choose from {', '.join(EXPERIMENTS)})", key="experiment")

    seed = tb.take("seed", int)
    if seed < 0:
        raise ParseError("config.seed must be >= 0", key="seed")
    seeds_value = tb.take("seeds", list, None)
    if seeds_value is None:
        seeds = (seed,)
    else:
        if not seeds_value or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds_value):
            raise ParseError("config.seeds must be a non-empty list of ints >= 0", key="seeds")
        if len(set(seeds_value)) != len(seeds_value):
            raise ParseError("config.seeds must not repeat", key="seeds")
        seeds = tuple(seeds_value)

    output_dir = tb.take("output_dir", str, None)
    emit = tb.take("emit", str, "csv")
    if emit not in EMIT_MODES:
        raise ParseError(f"emit must be one of {', '.join(EMIT_MODES)}", key="emit")
    figures = tb.take("figures", bool, False)

    T = _positive_int(tb, "T", None)
    epochs = _positive_int(tb, "epochs", None)
    batch_size = _positive_int(tb, "batch_size", None)
    record_every = _positive_int(tb, "record_every", None)
    probes = _positive_int(tb, "probes", 20)
    threshold = float(tb.take("threshold", (int, float), 1e-5))
    if threshold <= 0.0 or not math.isfinite(threshold):
        raise ParseError("config.threshold must be finite and > 0", key="threshold")

    objective_data = tb.take("objective", dict)
    sampler_data = tb.take("sampler", dict, {})
    optimizer_data = tb.take("optimizer", list, [])
    tb.finish()

    objective = _parse_objective(objective_data, experiment)
    sampler = _parse_sampler(sampler_data, objective, experiment)
    if not all(isinstance(o, dict) for o in optimizer_data):
        raise ParseError("[[optimizer]] entries must be tables", key="optimizer")
    optimizers = tuple(_parse_optimizer(o, i, experiment) for i, o in enumerate(optimizer_data))

    needs_steps = experiment in ("train", "compare", "regret", "ablation")
    if experiment == "regret":
        if T is None or epochs is not None:
            raise ParseError("regret runs are horizon-based: give T, not epochs", key="T")
    elif experiment == "ablation":
        if epochs is None:
            epochs = 10
        if T is not None:
            raise ParseError("ablation runs are epoch-based: give epochs, not T", key="T")
    elif needs_steps:
        if (T is None) == (epochs is None):
            raise ParseError(f"{experiment} needs exactly one of T / epochs", key="T")

    if experiment in ("ablation", "checkgrad"):
        if optimizers:
            raise ParseError(f"{experiment} takes no [[optimizer]] tables (the grid is built in)", key="optimizer")
    elif not optimizers:
        raise ParseError(f"{experiment} needs at least one [[optimizer]] table", key="optimizer")

    return RunConfig(
        experiment=experiment,
        seed=seed,
        seeds=seeds,
        objective=objective,
        sampler=sampler,
        optimizers=optimizers,
        T=T,
        epochs=epochs,
        batch_size=batch_size,
        record_every=record_every,
        probes=probes,
        threshold=threshold,
        output_dir=output_dir,
        emit=emit,
        figures=figures,
        raw=raw,
    )


def load_config(path: str | os.PathLike) -> RunConfig:
    """Read and validate a TOML config file."""
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        match = re.search(r"at line (\d+)", str(exc))
        raise ParseError(str(exc), line=int(match.group(1)) if match else None) from exc
    return parse_config(data)


def expand_runs(cfg: RunConfig) -> list[RunSpec]:
    """Seed x optimizer x grid-point expansion, in deterministic order.

    The ablation experiment expands its built-in grid: beta2 in
    {0.99, 0.999, 0.9999} x beta1 in {0, 0.9} x log10(alpha) in {-5..-1},
    each with bias correction on and off — 60 cells per seed.
    """
    runs: list[RunSpec] = []

    def push(label: str, opt: OptimizerSpec, seed: int) -> None:
        runs.append(RunSpec(run_id=len(runs), label=label, optimizer=opt, seed=seed))

    multi_seed = len(cfg.seeds) > 1

    if cfg.experiment == "ablation":
        for seed in cfg.seeds:
            for beta2 in (0.99, 0.999, 0.9999):
                for beta1 in (0.0, 0.9):
                    for k in range(-5, 0):
                        for bias in (True, False):
                            h = HyperParams(alpha=10.0**k, beta1=beta1, beta2=beta2)
                            opt = OptimizerSpec(name="adam", h=h, bias_correction=bias)
                            label = (
                                f"b2_{beta2:g}_b1_{beta1:g}_a1e{k}_"
                                f"{'corrected' if bias else 'uncorrected'}"
                            )
                            if multi_seed:
                                label += f"_s{seed}"
                            push(label, opt, seed)
        return runs

    if cfg.experiment == "checkgrad":
        return runs

    for seed in cfg.seeds:
        for opt in cfg.optimizers:
            points = opt.concrete()
            for concrete in points:
                label = concrete.name if concrete.bias_correction else "adam_uncorrected"
                if len(points) > 1:
                    label += f"_a{concrete.h.alpha:g}"
                if multi_seed:
                    label += f"_s{seed}"
                push(label, concrete, seed)
    return runs
