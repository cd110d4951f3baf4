"""Run report assembly, rendering, and persistence.

A RunReport is the single artifact of a profiling run. It serializes to
JSON losslessly (parse_report(emit_json(r)) == r), renders as a fixed
text table for terminals, and appends to a line-delimited run log for
longitudinal comparisons. Rendered numbers are rounded to two decimals;
the JSON keeps full precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Union

from .energy import EnergyMetrics
from .errors import SchemaError, ValidationError
from .latency import LatencyStats, Metric, TtltDecomposition, Workload
from .sizing import ByteSize, CacheBreakdown, UnitMode, format_bytes

_METRIC_ORDER = (Metric.TTFT, Metric.TPOT, Metric.TTLT)
_ENERGY_HEADER = {Metric.TTFT: "J/Prompt", Metric.TPOT: "J/Token", Metric.TTLT: "J/Request"}
_ENERGY_FIELD = {Metric.TTFT: "j_per_prompt", Metric.TPOT: "j_per_token", Metric.TTLT: "j_per_request"}


@dataclass
class SizeSection:
    """Memory sizing results carried inside a report."""

    cache: CacheBreakdown
    param_bytes: Optional[int] = None
    buffer_bytes: Optional[int] = None
    unit_mode: UnitMode = UnitMode.SI


@dataclass
class RunReport:
    tool_version: str
    created_at: str
    model_id: str
    backend_desc: str
    hardware: dict
    workload: Workload
    sizes: Optional[SizeSection] = None
    latencies: Optional[dict[str, LatencyStats]] = None
    energy: Optional[EnergyMetrics] = None
    ttlt_decomposition: Optional[TtltDecomposition] = None
    trace_path: Optional[str] = None
    flags: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.sizes is None and self.latencies is None and self.energy is None:
            raise ValidationError("a report needs at least one of sizes, latencies, energy")


def _workload_doc(w: Workload) -> dict:
    return {
        "batch": w.batch,
        "prompt_len": w.prompt_len,
        "gen_len": w.gen_len,
        "n_devices": w.n_devices,
        "runs": w.runs,
        "warmup": w.warmup,
        "seed": w.seed,
    }


def _stats_doc(stats: LatencyStats) -> dict:
    return {
        "metric": stats.metric.value,
        "samples": stats.samples,
        "mean_ms": stats.mean_ms,
        "std_ms": stats.std_ms,
        "min_ms": stats.min_ms,
        "max_ms": stats.max_ms,
        "p50_ms": stats.p50_ms,
        "p90_ms": stats.p90_ms,
        "p99_ms": stats.p99_ms,
        "runs": stats.runs,
        "warmup": stats.warmup,
        "window": list(stats.window),
    }


def emit_json(report: RunReport) -> dict:
    """Serialize to a JSON-compatible tree with stable field names."""
    doc: dict = {
        "tool_version": report.tool_version,
        "created_at": report.created_at,
        "model_id": report.model_id,
        "backend_desc": report.backend_desc,
        "hardware": report.hardware,
        "workload": _workload_doc(report.workload),
        "sizes": None,
        "latencies": None,
        "energy": None,
        "ttlt_decomposition": None,
        "trace_path": report.trace_path,
        "flags": list(report.flags),
    }
    if report.sizes is not None:
        s = report.sizes
        doc["sizes"] = {
            "param_bytes": s.param_bytes,
            "buffer_bytes": s.buffer_bytes,
            "cache": {
                "attention_bytes": s.cache.attention_bytes,
                "ssm_bytes": s.cache.ssm_bytes,
                "total_bytes": s.cache.total_bytes,
            },
            "unit_mode": s.unit_mode.value,
        }
    if report.latencies is not None:
        doc["latencies"] = {label: _stats_doc(stats) for label, stats in report.latencies.items()}
    if report.energy is not None:
        e = report.energy
        doc["energy"] = {
            "j_per_prompt": e.j_per_prompt,
            "j_per_token": e.j_per_token,
            "j_per_request": e.j_per_request,
            "mean_power_w": e.mean_power_w,
            "phase_windows": {k: list(v) for k, v in e.phase_windows.items()},
        }
    if report.ttlt_decomposition is not None:
        doc["ttlt_decomposition"] = {
            "ttft_portion_ms": report.ttlt_decomposition.ttft_portion_ms,
            "decode_portion_ms": report.ttlt_decomposition.decode_portion_ms,
        }
    return doc


def parse_report(doc: Mapping) -> RunReport:
    """Rebuild a RunReport from emit_json output."""
    required = ("tool_version", "created_at", "model_id", "backend_desc", "hardware", "workload")
    for key in required:
        if key not in doc:
            raise SchemaError(f"report document is missing '{key}'")
    sizes = None
    if doc.get("sizes") is not None:
        raw = doc["sizes"]
        cache = raw["cache"]
        sizes = SizeSection(
            cache=CacheBreakdown(
                attention_bytes=int(cache["attention_bytes"]),
                ssm_bytes=int(cache["ssm_bytes"]),
                total_bytes=int(cache["total_bytes"]),
            ),
            param_bytes=raw.get("param_bytes"),
            buffer_bytes=raw.get("buffer_bytes"),
            unit_mode=UnitMode(raw.get("unit_mode", "SI")),
        )
    latencies = None
    if doc.get("latencies") is not None:
        latencies = {}
        for label, raw in doc["latencies"].items():
            latencies[label] = LatencyStats(
                metric=Metric(raw["metric"]),
                samples=raw.get("samples"),
                mean_ms=raw["mean_ms"],
                std_ms=raw["std_ms"],
                min_ms=raw["min_ms"],
                max_ms=raw["max_ms"],
                p50_ms=raw["p50_ms"],
                p90_ms=raw["p90_ms"],
                p99_ms=raw["p99_ms"],
                runs=raw["runs"],
                warmup=raw["warmup"],
                window=tuple(raw.get("window", (0, 0))),
            )
    energy = None
    if doc.get("energy") is not None:
        raw = doc["energy"]
        energy = EnergyMetrics(
            j_per_prompt=raw.get("j_per_prompt"),
            j_per_token=raw.get("j_per_token"),
            j_per_request=raw.get("j_per_request"),
            mean_power_w={k: dict(v) for k, v in raw.get("mean_power_w", {}).items()},
            phase_windows={k: tuple(v) for k, v in raw.get("phase_windows", {}).items()},
        )
    decomposition = None
    if doc.get("ttlt_decomposition") is not None:
        raw = doc["ttlt_decomposition"]
        decomposition = TtltDecomposition(
            ttft_portion_ms=raw["ttft_portion_ms"],
            decode_portion_ms=raw["decode_portion_ms"],
        )
    return RunReport(
        tool_version=doc["tool_version"],
        created_at=doc["created_at"],
        model_id=doc["model_id"],
        backend_desc=doc["backend_desc"],
        hardware=dict(doc["hardware"]),
        workload=Workload(**doc["workload"]),
        sizes=sizes,
        latencies=latencies,
        energy=energy,
        ttlt_decomposition=decomposition,
        trace_path=doc.get("trace_path"),
        flags=list(doc.get("flags", [])),
    )


def _metric_columns(report: RunReport) -> list[tuple[str, str]]:
    columns = []
    for metric in _METRIC_ORDER:
        stats = (report.latencies or {}).get(metric.value)
        if stats is None:
            continue
        columns.append((metric.value, f"{stats.mean_ms:.2f}"))
        if report.energy is not None:
            joules = getattr(report.energy, _ENERGY_FIELD[metric])
            if joules is not None:
                columns.append((_ENERGY_HEADER[metric], f"{joules:.2f}"))
    return columns


def render_table(report: RunReport) -> str:
    """Render the report as a fixed text table.

    Pure function of the report: equal reports render byte-identically.
    """
    w = report.workload
    lines = [
        f"elana {report.tool_version} run report ({report.created_at})",
        f"model: {report.model_id}    backend: {report.backend_desc}",
        f"workload: batch={w.batch} prompt_len={w.prompt_len} gen_len={w.gen_len} "
        f"devices={w.n_devices} runs={w.runs} warmup={w.warmup} seed={w.seed}",
    ]
    device_names = report.hardware.get("device_names") or []
    if device_names:
        lines.append(f"devices: {', '.join(device_names)}")

    if report.sizes is not None:
        s = report.sizes
        unit_label = "SI" if s.unit_mode is UnitMode.SI else "binary"
        lines.append("")
        lines.append(f"memory ({unit_label} units)")
        if s.param_bytes is not None:
            lines.append(f"  param size    {format_bytes(ByteSize(s.param_bytes), s.unit_mode)}")
        if s.buffer_bytes is not None:
            lines.append(f"  buffer size   {format_bytes(ByteSize(s.buffer_bytes), s.unit_mode)}")
        lines.append(f"  kv cache      {format_bytes(ByteSize(s.cache.attention_bytes), s.unit_mode)}")
        lines.append(f"  ssm state     {format_bytes(ByteSize(s.cache.ssm_bytes), s.unit_mode)}")
        lines.append(f"  cache total   {format_bytes(ByteSize(s.cache.total_bytes), s.unit_mode)}")

    columns = _metric_columns(report)
    if columns:
        width = 12
        lines.append("")
        lines.append("latency (ms) and energy (J)")
        lines.append("  " + "".join(header.ljust(width) for header, _ in columns).rstrip())
        lines.append("  " + "".join(value.ljust(width) for _, value in columns).rstrip())
        for metric in _METRIC_ORDER:
            stats = (report.latencies or {}).get(metric.value)
            if stats is None:
                continue
            lines.append(
                f"  {metric.value}: std={stats.std_ms:.2f} p50={stats.p50_ms:.2f} "
                f"p90={stats.p90_ms:.2f} p99={stats.p99_ms:.2f} min={stats.min_ms:.2f} "
                f"max={stats.max_ms:.2f} runs={stats.runs}"
            )

    if report.ttlt_decomposition is not None:
        d = report.ttlt_decomposition
        lines.append(
            f"  TTLT split: prefill {d.ttft_portion_ms:.2f} + decode {d.decode_portion_ms:.2f}"
        )
    if report.energy is not None and report.energy.mean_power_w:
        for label in sorted(report.energy.mean_power_w):
            per_device = report.energy.mean_power_w[label]
            rendered = " ".join(f"{dev}={watts:.2f}W" for dev, watts in sorted(per_device.items()))
            lines.append(f"  power[{label}]: {rendered}")

    if report.trace_path:
        lines.append("")
        lines.append(f"trace: {report.trace_path}")
    if report.flags:
        lines.append("")
        lines.append("notes")
        for flag in report.flags:
            lines.append(f"  - {flag}")
    return "\n".join(lines) + "\n"


def append_run_log(report: RunReport, path: Union[str, Path]) -> None:
    """Append the report as one compact JSON line; creates the file."""
    line = json.dumps(emit_json(report), separators=(",", ":"))
    with open(path, "a") as fh:
        fh.write(line)
        fh.write("\n")
