"""Experiment orchestration: expand a config into runs, execute them (in
parallel when asked), and persist every artifact a run leaves behind.

Layout of an output directory:

    manifest.json        config echo + artifact version + seed(s) + run list
    NNN_<label>.csv      per-run trace (and NNN_<label>.dat when asked)
    summary.csv          one row per run, ranked by final train loss
    checkgrad.csv        probe table (checkgrad experiment only)
    figures/*.png        optional rendered figures
    FAILED               present only when some run raised; holds diagnostics

Determinism contract: a fixed (config, seed) produces byte-identical CSVs on
repeated invocations. All randomness flows from SeededRng(seed) through
named child streams, workers share no mutable state, and no timestamps are
written. The pool size (jobs) affects wall time only: OPTBENCH_JOBS env
overrides --jobs overrides the detected core count.

Divergence is an expected outcome, not a failure: a run whose full-dataset
loss goes non-finite (or exceeds 1e6x its initial value, or whose update
arithmetic overflows) is terminated and ranked with a +inf loss sentinel.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ObjectiveSpec, OptimizerSpec, RunConfig, RunSpec, SamplerSpec, expand_runs
from .core import (
    NonFiniteGradient,
    RangeError,
    SeededRng,
    ValidationError,
    zeros,
)
from .objectives import (
    Batch,
    BatchSampler,
    Objective,
    check_gradient,
    make_logreg,
    make_quadratic,
    make_sparse_bow,
    read_sparse_dataset,
    sample_batch,
    sample_indices,
    steps_per_epoch,
)
from .optim import bias_factor_description, make_learner
from .regret import (
    average_regret_decay,
    default_checkpoints,
    online_from_objective,
    run_online,
    theorem1_bound,
)
from .core import DegenerateRegret
from .trace import RunTrace, emit_csv, emit_dat, format_real

__all__ = [
    "RunTask",
    "RunOutcome",
    "build_objective",
    "resolve_jobs",
    "run_experiment",
]


SUMMARY_BASE_COLUMNS = (
    "run,label,optimizer,seed,alpha,beta1,beta2,epsilon,rho,bias_correction,"
    "status,final_train_loss,rows,csv"
)
SUMMARY_REGRET_EXTRAS = (
    ",final_regret,final_avg_regret,decay_slope,"
    "bound_term1,bound_term2,bound_term3,comparators_converged"
)


# ---------------------------------------------------------------------------
# Building blocks shared by coordinator and workers


def build_objective(spec: ObjectiveSpec, rng: SeededRng):
    """Construct the objective (and its Dataset, when one exists).

    Quadratic runs plant a random minimizer: training always starts at
    theta = 0, and a zero theta* would mean starting already converged.
    """
    if spec.kind == "quadratic":
        obj = make_quadratic(
            spec.dim,
            condition_number=spec.condition_number,
            noise_std=spec.noise_std,
            rng=rng.child("noise"),
            n=spec.n,
            theta_star=rng.child("theta_star").uniform(-2.0, 2.0, size=spec.dim),
        )
        return obj, None
    if spec.kind == "logreg":
        if spec.path is not None:
            data = read_sparse_dataset(spec.path)
        else:
            data = make_sparse_bow(
                n=spec.n, p=spec.p, K=spec.K, density=spec.density, rng=rng
            )
        return make_logreg(data, l2=spec.l2), data
    raise ValidationError(f"unknown objective kind {spec.kind!r}")


def _make_sampler(spec: SamplerSpec, seed_rng: SeededRng, batch_size: int) -> BatchSampler:
    return BatchSampler(
        rng=seed_rng.child("sampler"),
        batch_size=batch_size,
        policy=spec.policy,
        dropout_p=spec.dropout_p,
    )


def _draw_batch(sampler: BatchSampler, obj: Objective, data, t: int) -> Batch:
    if data is not None:
        return sample_batch(sampler, data, t)
    return Batch(indices=sample_indices(sampler, obj.n, t))


def _record_points(total: int, spe: int, record_every: int | None) -> set[int]:
    """t=1, every 10 early steps, every interval boundary, and the last step."""
    interval = record_every if record_every is not None else spe
    pts = {1, total}
    pts.update(t for t in range(10, min(total, 100) + 1, 10))
    pts.update(range(interval, total + 1, interval))
    return pts


def resolve_jobs(cli_jobs: int | None) -> int:
    """OPTBENCH_JOBS env > --jobs > detected core count."""
    env = os.environ.get("OPTBENCH_JOBS")
    if env is not None:
        try:
            k = int(env)
        except ValueError:
            raise RangeError("OPTBENCH_JOBS", f"must be an integer, got {env!r}") from None
        if k < 1:
            raise RangeError("OPTBENCH_JOBS", f"must be >= 1, got {k}")
        return k
    if cli_jobs is not None:
        if cli_jobs < 1:
            raise RangeError("jobs", f"must be >= 1, got {cli_jobs}")
        return cli_jobs
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# One run, executed inside a worker


@dataclass(frozen=True)
class RunTask:
    """Everything a worker needs; plain data so it crosses process bounds."""

    run_id: int
    label: str
    experiment: str
    objective: ObjectiveSpec
    sampler: SamplerSpec
    optimizer: OptimizerSpec
    seed: int
    T: int | None
    epochs: int | None
    batch_size: int
    record_every: int | None
    out_csv: str
    want_dat: bool


@dataclass
class RunOutcome:
    run_id: int
    status: str = "ok"  # ok | diverged | failed
    final_train_loss: float = math.nan
    rows: int = 0
    error: str = ""
    final_regret: float = math.nan
    final_avg_regret: float = math.nan
    decay_slope: float = math.nan
    bound_terms: tuple[float, float, float] = (math.nan, math.nan, math.nan)
    comparators_converged: bool = True


def _emit(task: RunTask, trace: RunTrace) -> None:
    emit_csv(trace, task.out_csv)
    if task.want_dat:
        emit_dat(trace, str(Path(task.out_csv).with_suffix(".dat")))


def _training_run(task: RunTask) -> RunOutcome:
    seed_rng = SeededRng(task.seed)
    obj, data = build_objective(task.objective, seed_rng.child("objective"))
    sampler = _make_sampler(task.sampler, seed_rng, task.batch_size)
    spe = steps_per_epoch(obj.n, task.batch_size)
    total = task.T if task.T is not None else task.epochs * spe
    record = _record_points(total, spe, task.record_every)

    opt = task.optimizer
    learner = make_learner(
        opt.name, obj.dim, opt.h, rho=opt.rho, bias_correction=opt.bias_correction
    )
    theta = zeros(obj.dim)
    initial_loss = obj.full_eval(theta)
    trace = RunTrace()
    outcome = RunOutcome(run_id=task.run_id)

    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, total + 1):
            epoch = 1 + (t - 1) // spe
            recording = t in record
            try:
                batch = _draw_batch(sampler, obj, data, t)
                mb_loss = obj.eval(theta, batch) if recording else math.nan
                g = obj.grad(theta, batch)
                report = learner.step(theta, g)
            except (NonFiniteGradient, OverflowError):
                trace.record(t, epoch, math.inf, math.nan, math.nan, math.nan, math.nan)
                outcome.status = "diverged"
                break
            theta = report.theta_next
            if not recording:
                continue
            full = obj.full_eval(theta)
            trace.record(
                t,
                epoch,
                full,
                mb_loss,
                float(np.linalg.norm(report.delta)),
                float(np.max(np.abs(report.delta))) if report.delta.size else 0.0,
                float(np.linalg.norm(g)),
            )
            if not math.isfinite(full) or (initial_loss > 0 and full > 1e6 * initial_loss):
                outcome.status = "diverged"
                break

    outcome.final_train_loss = (
        math.inf if outcome.status == "diverged" else trace.rows[-1].train_loss
    )
    outcome.rows = len(trace)
    _emit(task, trace)
    return outcome


def _regret_run(task: RunTask) -> RunOutcome:
    seed_rng = SeededRng(task.seed)
    obj, _ = build_objective(task.objective, seed_rng.child("objective"))
    sampler = _make_sampler(task.sampler, seed_rng, task.batch_size)
    seq = online_from_objective(obj, sampler, task.T)
    spe = steps_per_epoch(obj.n, task.batch_size)
    cps = default_checkpoints(task.T)

    opt = task.optimizer
    learner = make_learner(
        opt.name, obj.dim, opt.h, rho=opt.rho, bias_correction=opt.bias_correction
    )

    # Wrap the step rule to capture per-step norms and the post-step iterate
    # at checkpoint rounds; run_online drives the learner as usual.
    cpset = set(cps)
    grabbed: dict[int, tuple[float, float, float, np.ndarray]] = {}
    inner = learner._step_fn

    def recording_step(state, theta, g, hp):
        report = inner(state, theta, g, hp)
        if state.t in cpset:
            grabbed[state.t] = (
                float(np.linalg.norm(report.delta)),
                float(np.max(np.abs(report.delta))) if report.delta.size else 0.0,
                float(np.linalg.norm(g)),
                np.array(report.theta_next, dtype=np.float64),
            )
        return report

    learner._step_fn = recording_step
    ledger = run_online(seq, learner, checkpoints=cps)

    trace = RunTrace(regret_columns=True)
    outcome = RunOutcome(run_id=task.run_id)
    for rec in ledger.checkpoints:
        t = rec.T
        step_norm, max_abs, grad_norm, theta_t = grabbed[t]
        _, terms = theorem1_bound(ledger, ledger.h, horizon=t)
        trace.record(
            t,
            1 + (t - 1) // spe,
            obj.full_eval(theta_t),
            float(ledger.step_costs[t - 1]),
            step_norm,
            max_abs,
            grad_norm,
            regret=rec.regret,
            avg_regret=rec.avg_regret,
            bound_term1=terms["term1"],
            bound_term2=terms["term2"],
            bound_term3=terms["term3"],
        )
        outcome.bound_terms = (terms["term1"], terms["term2"], terms["term3"])
        outcome.comparators_converged &= rec.comparator_converged

    last = ledger.checkpoints[-1]
    outcome.final_train_loss = trace.rows[-1].train_loss
    outcome.final_regret = last.regret
    outcome.final_avg_regret = last.avg_regret
    outcome.rows = len(trace)
    try:
        outcome.decay_slope = average_regret_decay(ledger.decay_pairs()).slope
    except DegenerateRegret:
        outcome.decay_slope = math.nan
    _emit(task, trace)
    return outcome


def _execute_task(task: RunTask) -> RunOutcome:
    try:
        if task.experiment == "regret":
            return _regret_run(task)
        return _training_run(task)
    except Exception:
        return RunOutcome(run_id=task.run_id, status="failed", error=traceback.format_exc())


# ---------------------------------------------------------------------------
# Coordinator


def _preflight(cfg: RunConfig) -> int:
    """Surface config-level impossibilities before any worker starts.

    Returns the effective batch size: the configured one, or the full
    dataset (batch_size = n) when the config leaves it out.
    """
    resolved = cfg.batch_size
    for seed in cfg.seeds:
        obj, data = build_objective(cfg.objective, SeededRng(seed).child("objective"))
        if resolved is None:
            resolved = obj.n
        if cfg.batch_size is not None and cfg.experiment != "checkgrad":
            if cfg.sampler.policy == "shuffle_each_epoch" and cfg.batch_size > obj.n:
                raise ValidationError(
                    f"batch_size {cfg.batch_size} exceeds dataset size {obj.n} "
                    "under the shuffle_each_epoch policy"
                )
        if cfg.sampler.dropout_p > 0.0 and data is None:
            raise ValidationError("dropout requires an objective with sparse features")
    return resolved


def _summary_sort_key(pair):
    task, outcome = pair
    loss = outcome.final_train_loss
    return (
        1 if outcome.status == "failed" else 0,
        math.inf if math.isnan(loss) else loss,
        task.run_id,
    )


def _write_summary(path: Path, pairs, regret_mode: bool) -> None:
    header = SUMMARY_BASE_COLUMNS + (SUMMARY_REGRET_EXTRAS if regret_mode else "")
    lines = [header]
    for task, outcome in sorted(pairs, key=_summary_sort_key):
        h = task.optimizer.h
        name = task.optimizer.name
        if name == "adam" and not task.optimizer.bias_correction:
            name = "adam_uncorrected"
        cells = [
            str(task.run_id),
            task.label,
            name,
            str(task.seed),
            format_real(h.alpha),
            format_real(h.beta1),
            format_real(h.beta2),
            format_real(h.epsilon),
            format_real(task.optimizer.rho),
            "1" if task.optimizer.bias_correction else "0",
            outcome.status,
            format_real(outcome.final_train_loss),
            str(outcome.rows),
            Path(task.out_csv).name,
        ]
        if regret_mode:
            cells += [
                format_real(outcome.final_regret),
                format_real(outcome.final_avg_regret),
                format_real(outcome.decay_slope),
                format_real(outcome.bound_terms[0]),
                format_real(outcome.bound_terms[1]),
                format_real(outcome.bound_terms[2]),
                "1" if outcome.comparators_converged else "0",
            ]
        lines.append(",".join(cells))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_manifest(out_dir: Path, cfg: RunConfig, tasks: list[RunTask]) -> None:
    manifest = {
        "artifact": "optbench",
        "version": __version__,
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "seeds": list(cfg.seeds),
        "config": cfg.raw,
        "bias_correction_factors": {
            task.label: bias_factor_description(task.optimizer.h) for task in tasks
        },
        "runs": [
            {"run": t.run_id, "label": t.label, "seed": t.seed, "csv": Path(t.out_csv).name}
            for t in tasks
        ],
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_checkgrad(cfg: RunConfig, out_dir: Path) -> int:
    worst_overall = 0.0
    lines = ["seed,probe,max_rel_err"]
    for seed in cfg.seeds:
        seed_rng = SeededRng(seed)
        obj, _ = build_objective(cfg.objective, seed_rng.child("objective"))
        bs = cfg.batch_size if cfg.batch_size is not None else min(32, obj.n)
        for k in range(cfg.probes):
            prng = seed_rng.child("probe", k)
            theta = prng.child("theta").normal(size=obj.dim)
            idx = np.sort(prng.child("batch").choice(obj.n, size=bs, replace=False))
            err = check_gradient(obj, theta, Batch(indices=idx.astype(np.int64)), rng=prng)
            worst_overall = max(worst_overall, err)
            lines.append(f"{seed},{k},{format_real(err)}")
    with open(out_dir / "checkgrad.csv", "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    if worst_overall > cfg.threshold:
        print(
            f"optbench: checkgrad FAILED: max relative error {worst_overall:.3e} "
            f"> threshold {cfg.threshold:.3e}",
            file=sys.stderr,
        )
        return 2
    return 0


def run_experiment(cfg: RunConfig, jobs: int | None = None) -> int:
    """Execute a validated config. Returns the process exit status (0 or 2).

    Configuration-level problems (unbuildable objective, impossible batch
    size) raise ValidationError/ParseError before any run starts; run-time
    failures inside workers are caught, recorded in a FAILED marker file, and
    reported with exit status 2 — partial outputs are retained.
    """
    if cfg.output_dir is None:
        raise ValidationError("an output directory is required (config output_dir or --out)")
    n_jobs = resolve_jobs(jobs)
    batch_size = _preflight(cfg)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if cfg.experiment == "checkgrad":
        _write_manifest(out_dir, cfg, [])
        return _run_checkgrad(cfg, out_dir)

    specs = expand_runs(cfg)
    tasks = [
        RunTask(
            run_id=s.run_id,
            label=s.label,
            experiment=cfg.experiment,
            objective=cfg.objective,
            sampler=cfg.sampler,
            optimizer=s.optimizer,
            seed=s.seed,
            T=cfg.T,
            epochs=cfg.epochs,
            batch_size=batch_size,
            record_every=cfg.record_every,
            out_csv=str(out_dir / f"{s.run_id:03d}_{s.label}.csv"),
            want_dat=cfg.emit == "csv+gnuplot_dat",
        )
        for s in specs
    ]
    _write_manifest(out_dir, cfg, tasks)

    if n_jobs == 1 or len(tasks) <= 1:
        outcomes = [_execute_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(n_jobs, len(tasks))) as pool:
            outcomes = list(pool.map(_execute_task, tasks, chunksize=1))
    outcomes.sort(key=lambda oc: oc.run_id)
    pairs = list(zip(tasks, outcomes))

    _write_summary(out_dir / "summary.csv", pairs, regret_mode=cfg.experiment == "regret")

    if cfg.figures:
        from .figures import render_figures

        render_figures(out_dir, pairs, cfg.experiment)

    failures = [(t, oc) for t, oc in pairs if oc.status == "failed"]
    if failures:
        with open(out_dir / "FAILED", "w", encoding="utf-8", newline="\n") as fh:
            for task, outcome in failures:
                fh.write(f"run {task.run_id} ({task.label}, seed {task.seed}) failed:\n")
                fh.write(outcome.error + "\n")
        for task, _ in failures:
            print(f"optbench: run {task.run_id} ({task.label}) failed; see {out_dir / 'FAILED'}", file=sys.stderr)
        return 2
    return 0
