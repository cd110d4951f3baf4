"""Span recording and timeline-viewer export.

Spans are recorded as raw monotonic-nanosecond intervals from any
thread, then materialized as complete-duration events (phase "X") with
microsecond timestamps rebased so the earliest span starts at zero.
The export format is the JSON object form consumed by the usual
browser timeline viewers; files conventionally end in ``.trace.json``.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Mapping, Optional, Sequence, Union

from .errors import ValidationError

TRACE_SUFFIX = ".trace.json"


@dataclass(frozen=True)
class TraceEvent:
    """One complete-duration event, microseconds from the trace epoch."""

    name: str
    category: str
    ts_us: int
    dur_us: int
    pid: int = 0
    tid: int = 0
    args: Optional[Mapping] = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ValidationError("trace event needs a non-empty name")
        if self.ts_us < 0 or self.dur_us < 0:
            raise ValidationError("trace event timestamps must be non-negative")


@dataclass(frozen=True)
class OpAggregate:
    name: str
    total_dur_us: int
    count: int
    mean_dur_us: float
    share_of_total: float


class SpanRecorder:
    """Thread-safe accumulator of raw spans."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._spans: list[tuple[str, str, int, int, int, int, Optional[Mapping]]] = []

    def record_span(
        self,
        name: str,
        category: str,
        start_ts: int,
        dur: int,
        track: tuple[int, int] = (0, 0),
        args: Optional[Mapping] = None,
    ) -> None:
        """Record one span; start_ts and dur are clock nanoseconds."""
        if not name:
            raise ValidationError("span needs a non-empty name")
        if dur < 0:
            raise ValidationError("span duration must be non-negative")
        pid, tid = track
        with self._lock:
            self._spans.append((name, category, int(start_ts), int(dur), pid, tid, args))

    def __len__(self) -> int:
        with self._lock:
            return len(self._spans)

    def events(self) -> list[TraceEvent]:
        """Materialize recorded spans, rebased so the first starts at 0."""
        with self._lock:
            spans = list(self._spans)
        if not spans:
            return []
        epoch = min(start for _, _, start, _, _, _, _ in spans)
        events = []
        for name, category, start, dur, pid, tid, args in spans:
            events.append(
                TraceEvent(
                    name=name,
                    category=category,
                    ts_us=(start - epoch) // 1000,
                    dur_us=dur // 1000,
                    pid=pid,
                    tid=tid,
                    args=args,
                )
            )
        return events


def _event_payload(event: TraceEvent) -> dict:
    payload = {
        "name": event.name,
        "cat": event.category,
        "ph": "X",
        "ts": event.ts_us,
        "dur": event.dur_us,
        "pid": event.pid,
        "tid": event.tid,
    }
    if event.args is not None:
        payload["args"] = dict(event.args)
    return payload


def export_trace_json(events: Sequence[TraceEvent], destination: Union[str, Path, IO[str]]) -> None:
    """Write events, sorted by timestamp, as {"traceEvents": [...]}."""
    ordered = sorted(events, key=lambda e: e.ts_us)
    payload = {"traceEvents": [_event_payload(e) for e in ordered]}
    if hasattr(destination, "write"):
        json.dump(payload, destination)
        return
    with open(destination, "w") as fh:
        json.dump(payload, fh)


def load_trace_json(source: Union[str, Path, IO[str]]) -> list[TraceEvent]:
    """Read events back from an export; inverse of export_trace_json."""
    if hasattr(source, "read"):
        doc = json.load(source)
    else:
        with open(source) as fh:
            doc = json.load(fh)
    if not isinstance(doc, Mapping) or "traceEvents" not in doc:
        raise ValidationError("trace file has no 'traceEvents' list")
    events = []
    for item in doc["traceEvents"]:
        events.append(
            TraceEvent(
                name=item["name"],
                category=item.get("cat", ""),
                ts_us=int(item["ts"]),
                dur_us=int(item["dur"]),
                pid=int(item.get("pid", 0)),
                tid=int(item.get("tid", 0)),
                args=item.get("args"),
            )
        )
    return events


def aggregate_ops(events: Sequence[TraceEvent], top_k: int = 20) -> list[OpAggregate]:
    """Group events by name into per-op totals.

    Ordered by total duration descending, ties broken by name, truncated
    to top_k. Shares are of the total duration across all events, so a
    truncated listing's shares still refer to the whole trace.
    """
    if top_k < 1:
        raise ValidationError(f"top_k must be at least 1, got {top_k}")
    totals: dict[str, list[int]] = {}
    for event in events:
        bucket = totals.setdefault(event.name, [0, 0])
        bucket[0] += event.dur_us
        bucket[1] += 1
    grand_total = sum(total for total, _ in totals.values())
    aggregates = [
        OpAggregate(
            name=name,
            total_dur_us=total,
            count=count,
            mean_dur_us=total / count,
            share_of_total=(total / grand_total) if grand_total > 0 else 0.0,
        )
        for name, (total, count) in totals.items()
    ]
    aggregates.sort(key=lambda a: (-a.total_dur_us, a.name))
    return aggregates[:top_k]
