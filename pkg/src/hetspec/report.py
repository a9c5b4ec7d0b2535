"""File output: event traces, per-run metrics and comparison tables.

Every file is written to a temporary sibling first and moved into place, so a
crash never leaves a half-written report behind.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence

from .pipeline import Event, EventKind, EventTrace

TRACE_COLUMNS = ("time", "resource", "kind", "micro_batch", "slot")
TRACE_TOTALS = ("makespan", "llm_busy_sec", "accepted_tokens", "verify_passes",
                "kv_tokens", "padding_tokens", "extra_query_tokens")

RUN_COLUMNS = ("seed", "policy", "mode", "decompose", "goodput", "selector_goodput",
               "idle_fraction", "makespan", "tokens", "verify_sec", "padding_tokens",
               "kv_tokens", "regret", "goodput_regret", "switching_cost", "switches",
               "micro_batches")
COMPARE_COLUMNS = ("label", "policy", "mode", "decompose", "goodput_mean", "goodput_std",
                   "selector_goodput_mean", "selector_goodput_std", "regret_mean", "regret_std")
SWEEP_COLUMNS = ("seed", "micro_batches", "goodput", "idle_fraction", "tuned")
REGRET_COLUMNS = ("seed", "t", "regret")


def atomic_write(path: str | Path, data: str) -> Path:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def to_csv(columns: Sequence[str], rows: Iterable[Mapping]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row[c]) for c in columns])
    return buf.getvalue()


def _event_row(e: Event) -> Dict[str, object]:
    return {"time": e.time_sec, "resource": e.resource, "kind": e.kind.value,
            "micro_batch": e.micro_batch, "slot": e.slot}


def emit_trace(trace: EventTrace, path: str | Path, fmt: str = "csv") -> Path:
    """Write ``trace`` as CSV (one row per event) or JSON (same fields plus totals)."""
    if fmt == "csv":
        return atomic_write(path, to_csv(TRACE_COLUMNS, map(_event_row, trace.events)))
    if fmt == "json":
        doc = {
            "columns": list(TRACE_COLUMNS),
            "events": [_event_row(e) for e in trace.events],
            "totals": {k: getattr(trace, k) for k in TRACE_TOTALS},
        }
        return atomic_write(path, json.dumps(doc, indent=1) + "\n")
    raise ValueError(f"unknown trace format {fmt!r}")


def _event(row: Mapping) -> Event:
    return Event(float(row["time"]), EventKind(row["kind"]), str(row["resource"]),
                 int(row["micro_batch"]), int(row["slot"]))


def load_trace(path: str | Path) -> EventTrace:
    """Read a trace written by :func:`emit_trace`; CSV files carry no totals."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        doc = json.loads(text)
        trace = EventTrace(events=[_event(r) for r in doc["events"]])
        for k, v in doc.get("totals", {}).items():
            setattr(trace, k, v)
        return trace
    rows = list(csv.DictReader(io.StringIO(text)))
    return EventTrace(events=[_event(r) for r in rows])


def write_runs(report, path: str | Path) -> Path:
    return atomic_write(path, to_csv(RUN_COLUMNS, (r.row() for r in report.runs)))


def write_regret(report, path: str | Path) -> Path:
    rows = [{"seed": r.seed, "t": t, "regret": v}
            for r in report.runs for t, v in zip(r.regret_t, r.regret_curve)]
    return atomic_write(path, to_csv(REGRET_COLUMNS, rows))


def write_json(doc, path: str | Path) -> Path:
    return atomic_write(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def write_comparison(rows: Sequence[Mapping], path: str | Path) -> Path:
    return atomic_write(path, to_csv(COMPARE_COLUMNS, rows))


def sweep_rows(sweeps: Sequence[Mapping]) -> List[Dict[str, object]]:
    rows = []
    for s in sweeps:
        for b, tp in s["curve"].items():
            rows.append({"seed": s["seed"], "micro_batches": b, "goodput": tp,
                         "idle_fraction": s["idle"][b], "tuned": b == s["tuned_b"]})
    return rows


def write_sweep(sweeps: Sequence[Mapping], path: str | Path) -> Path:
    return atomic_write(path, to_csv(SWEEP_COLUMNS, sweep_rows(sweeps)))
