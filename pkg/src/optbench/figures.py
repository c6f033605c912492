"""Figure rendering for the report path: PNGs next to the delimited output.

Figures are a convenience view of the same tables the CSVs hold — nothing is
computed here that is not already in a trace or the summary. Rendering uses
the Agg backend so it works headless; the CSV/.dat files remain the normative
record (figures are opted into via the `figures` config key).
"""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .trace import RunTrace, read_trace_csv

__all__ = ["render_figures"]


def _finite(xs, ys):
    pts = [(x, y) for x, y in zip(xs, ys) if math.isfinite(y)]
    return [p[0] for p in pts], [p[1] for p in pts]


def _loss_figure(traces: list[tuple[str, RunTrace]], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    positive = True
    for label, trace in traces:
        ts = [row.t for row in trace]
        losses = [row.train_loss for row in trace]
        ts, losses = _finite(ts, losses)
        positive &= all(v > 0 for v in losses)
        ax.plot(ts, losses, label=label, linewidth=1.2)
    if positive:
        ax.set_yscale("log")
    ax.set_xlabel("step t")
    ax.set_ylabel("full train loss")
    ax.legend(fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _regret_figure(traces: list[tuple[str, RunTrace]], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    guide_ts = None
    for label, trace in traces:
        ts = [row.t for row in trace]
        avg = [row.avg_regret for row in trace]
        ts, avg = _finite(ts, avg)
        ts, avg = zip(*[(t, r) for t, r in zip(ts, avg) if r > 0]) if any(r > 0 for r in avg) else ([], [])
        if ts:
            ax.loglog(ts, avg, marker="o", markersize=3, linewidth=1.0, label=label)
            if guide_ts is None:
                guide_ts = (ts, avg)
    if guide_ts:
        ts, avg = guide_ts
        ref = [avg[0] * math.sqrt(ts[0] / t) for t in ts]
        ax.loglog(ts, ref, "k--", linewidth=0.8, label="slope -1/2 guide")
    ax.set_xlabel("horizon T")
    ax.set_ylabel("R(T) / T")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _ablation_figure(pairs, path: Path) -> None:
    """Final loss vs alpha, one panel per beta2, solid/dashed = corrected or not."""
    beta2s = sorted({t.optimizer.h.beta2 for t, _ in pairs})
    fig, axes = plt.subplots(1, len(beta2s), figsize=(4.2 * len(beta2s), 4.0), sharey=True)
    if len(beta2s) == 1:
        axes = [axes]
    for ax, beta2 in zip(axes, beta2s):
        cells = [(t, oc) for t, oc in pairs if t.optimizer.h.beta2 == beta2]
        beta1s = sorted({t.optimizer.h.beta1 for t, _ in cells})
        for beta1 in beta1s:
            for corrected in (True, False):
                sel = [
                    (t.optimizer.h.alpha, oc.final_train_loss)
                    for t, oc in cells
                    if t.optimizer.h.beta1 == beta1
                    and t.optimizer.bias_correction is corrected
                ]
                sel.sort()
                alphas = [a for a, _ in sel]
                # +inf sentinels (diverged cells) are drawn at the top edge.
                cap = max(
                    (v for _, v in sel if math.isfinite(v)), default=1.0
                ) * 3.0
                losses = [v if math.isfinite(v) else cap for _, v in sel]
                ax.plot(
                    alphas,
                    losses,
                    marker="o" if corrected else "x",
                    linestyle="-" if corrected else "--",
                    linewidth=1.0,
                    markersize=4,
                    label=f"b1={beta1:g} {'corrected' if corrected else 'uncorrected'}",
                )
        ax.set_xscale("log")
        ax.set_title(f"beta2 = {beta2:g}")
        ax.set_xlabel("alpha")
        ax.grid(alpha=0.3)
    axes[0].set_ylabel("final train loss (diverged drawn at top)")
    axes[0].legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_figures(out_dir: Path, pairs, experiment: str) -> list[Path]:
    """Render the figures that make sense for this experiment's outputs.

    pairs is the coordinator's (RunTask, RunOutcome) list; traces are read
    back from the emitted CSVs so the figures depict exactly what was shipped.
    """
    fig_dir = Path(out_dir) / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    readable = [
        (t.label, read_trace_csv(t.out_csv))
        for t, oc in pairs
        if oc.status != "failed" and Path(t.out_csv).exists()
    ]

    if experiment in ("train", "compare", "regret") and readable:
        target = fig_dir / "loss_curves.png"
        _loss_figure(readable, target)
        written.append(target)
    if experiment == "regret" and readable:
        target = fig_dir / "regret_decay.png"
        _regret_figure(readable, target)
        written.append(target)
    if experiment == "ablation" and pairs:
        target = fig_dir / "ablation_grid.png"
        _ablation_figure([(t, oc) for t, oc in pairs if oc.status != "failed"], target)
        written.append(target)
    return written
