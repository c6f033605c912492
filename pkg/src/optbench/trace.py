"""Run traces and their delimited emission.

A trace is the time series a training or regret run leaves behind: one row
per recording point carrying the full-dataset loss, the minibatch loss, and
the step/gradient norms, plus — for regret runs — the cumulative regret, its
per-round average, and the three bound terms evaluated at that horizon.

CSV emission is the normative format: ASCII, LF line endings, a fixed header,
and reals printed with 17 significant digits so that re-parsing reproduces
every float bit-for-bit. The .dat emission is the same table whitespace-
separated for plotting tools that prefer it.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterator

from .core import IoError, ParseError, ValidationError

__all__ = [
    "CSV_BASE_HEADER",
    "CSV_REGRET_HEADER",
    "TraceRow",
    "RunTrace",
    "format_real",
    "emit_csv",
    "emit_dat",
    "read_trace_csv",
    "traces_equal",
]


CSV_BASE_HEADER = "t,epoch,train_loss,minibatch_loss,step_norm,max_abs_step,grad_norm"
CSV_REGRET_HEADER = CSV_BASE_HEADER + ",regret,avg_regret,bound_term1,bound_term2,bound_term3"

_BASE_FIELDS = ("train_loss", "minibatch_loss", "step_norm", "max_abs_step", "grad_norm")
_REGRET_FIELDS = ("regret", "avg_regret", "bound_term1", "bound_term2", "bound_term3")


@dataclass(frozen=True)
class TraceRow:
    """One recorded step. The regret columns are None outside regret runs."""

    t: int
    epoch: int
    train_loss: float
    minibatch_loss: float
    step_norm: float
    max_abs_step: float
    grad_norm: float
    regret: float | None = None
    avg_regret: float | None = None
    bound_term1: float | None = None
    bound_term2: float | None = None
    bound_term3: float | None = None


class RunTrace:
    """Rows of a single run, strictly increasing in t.

    regret_columns fixes the schema up front: every appended row must carry
    all five regret fields (regret run) or none of them (plain run), so the
    emitted header is a property of the trace, not of individual rows.
    """

    def __init__(self, regret_columns: bool = False):
        self.regret_columns = bool(regret_columns)
        self.rows: list[TraceRow] = []

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[TraceRow]:
        return iter(self.rows)

    @property
    def header(self) -> str:
        return CSV_REGRET_HEADER if self.regret_columns else CSV_BASE_HEADER

    def append(self, row: TraceRow) -> None:
        if self.rows and row.t <= self.rows[-1].t:
            raise ValidationError(
                f"trace rows must be strictly increasing in t "
                f"(got t={row.t} after t={self.rows[-1].t})"
            )
        has_regret = all(getattr(row, f) is not None for f in _REGRET_FIELDS)
        has_none = all(getattr(row, f) is None for f in _REGRET_FIELDS)
        if self.regret_columns and not has_regret:
            raise ValidationError("regret trace rows need all five regret columns")
        if not self.regret_columns and not has_none:
            raise ValidationError("plain trace rows must not carry regret columns")
        self.rows.append(row)

    def record(
        self,
        t: int,
        epoch: int,
        train_loss: float,
        minibatch_loss: float,
        step_norm: float,
        max_abs_step: float,
        grad_norm: float,
        **regret_fields: float,
    ) -> TraceRow:
        row = TraceRow(
            t=t,
            epoch=epoch,
            train_loss=train_loss,
            minibatch_loss=minibatch_loss,
            step_norm=step_norm,
            max_abs_step=max_abs_step,
            grad_norm=grad_norm,
            **regret_fields,
        )
        self.append(row)
        return row


def format_real(x: float) -> str:
    """17-significant-digit decimal: enough to round-trip any binary64."""
    return format(float(x), ".17g")


def _row_values(trace: RunTrace, row: TraceRow) -> list[str]:
    vals = [str(row.t), str(row.epoch)]
    vals += [format_real(getattr(row, f)) for f in _BASE_FIELDS]
    if trace.regret_columns:
        vals += [format_real(getattr(row, f)) for f in _REGRET_FIELDS]
    return vals


def _require_rows(trace: RunTrace) -> None:
    if len(trace) == 0:
        raise ValidationError("refusing to emit an empty trace")


def emit_csv(trace: RunTrace, path: str | os.PathLike) -> Path:
    """Write the trace as ASCII CSV with LF endings and the exact header."""
    _require_rows(trace)
    out = Path(path)
    lines = [trace.header]
    lines += [",".join(_row_values(trace, row)) for row in trace]
    try:
        with open(out, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write trace CSV {out}: {exc}") from exc
    return out


def emit_dat(trace: RunTrace, path: str | os.PathLike) -> Path:
    """Write the same table whitespace-separated with a '#'-commented header."""
    _require_rows(trace)
    out = Path(path)
    lines = ["# " + trace.header.replace(",", " ")]
    lines += [" ".join(_row_values(trace, row)) for row in trace]
    try:
        with open(out, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write trace .dat {out}: {exc}") from exc
    return out


def read_trace_csv(path: str | os.PathLike) -> RunTrace:
    """Parse an emitted CSV back into a RunTrace (exact float round-trip)."""
    src = Path(path)
    try:
        text = src.read_text(encoding="ascii")
    except OSError as exc:
        raise IoError(f"cannot read trace CSV {src}: {exc}") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty trace file", line=1)
    if lines[0] == CSV_BASE_HEADER:
        trace = RunTrace(regret_columns=False)
    elif lines[0] == CSV_REGRET_HEADER:
        trace = RunTrace(regret_columns=True)
    else:
        raise ParseError(f"unrecognized trace header {lines[0]!r}", line=1)
    ncols = len(trace.header.split(","))
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != ncols:
            raise ParseError(f"expected {ncols} columns, got {len(parts)}", line=lineno)
        try:
            t, epoch = int(parts[0]), int(parts[1])
            reals = [float(p) for p in parts[2:]]
        except ValueError as exc:
            raise ParseError(f"bad numeric field: {exc}", line=lineno) from exc
        trace.append(TraceRow(t, epoch, *reals))
    return trace


def traces_equal(a: RunTrace, b: RunTrace) -> bool:
    """Bitwise row equality (NaN compares equal to NaN)."""
    if a.regret_columns != b.regret_columns or len(a) != len(b):
        return False
    names = [f.name for f in fields(TraceRow)]
    for ra, rb in zip(a, b):
        for name in names:
            va, vb = getattr(ra, name), getattr(rb, name)
            if va is None or vb is None:
                if va is not vb:
                    return False
            elif va != vb and not (math.isnan(va) and math.isnan(vb)):
                return False
    return True
