"""Command line front end.

Three subcommands cover the profiling surface: ``size`` computes memory
footprints from an architecture config, ``latency`` drives a backend
through the timing harnesses, and ``all`` does both in one run. Exit
codes: 0 on success, 1 for runtime failures (unreadable inputs, backend
or measurement errors), 2 for bad flags or an inconsistent plan.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import platform
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from ._version import __version__
from .backends import resolve_backend
from .energy import (
    DEFAULT_SAMPLE_INTERVAL_S,
    energy_metrics,
    parse_power_source,
    start_sampler,
    stop_sampler,
    write_power_log,
)
from .errors import ConfigError, ElanaError, UsageError, ValidationError
from .latency import Metric, Workload, measure_ttft, measure_tpot, measure_ttlt
from .report import RunReport, SizeSection, append_run_log, emit_json, render_table
from .sizing import UnitMode, cache_size, param_and_buffer_size, parse_arch, parse_param_inventory
from .tracing import SpanRecorder, export_trace_json

logger = logging.getLogger(__name__)

_METRIC_NAMES = {m.value.lower(): m for m in Metric}
_BACKEND_SCHEMES = ("simulated", "hub")
_POWER_SCHEMES = ("mock-const", "mock-script", "gpu", "soc")

DEFAULT_RUNS = 100
DEFAULT_RUNS_TTLT = 20
DEFAULT_WARMUP = 3


@dataclass
class RunPlan:
    """Validated invocation, ready to execute."""

    subcommand: str
    arch_path: Optional[str]
    backend_spec: Optional[str]
    workload: Workload
    runs_ttlt: int
    metrics: tuple[Metric, ...]
    energy_enabled: bool
    power_sources: tuple[str, ...]
    power_interval_s: float
    power_log_path: Optional[str]
    trace_path: Optional[str]
    unit_mode: UnitMode
    output: str
    report_path: Optional[str]
    run_log_path: Optional[str]
    raw_samples: bool


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", choices=("table", "json", "both"), default="table",
                        help="what to print to stdout (default: table)")
    common.add_argument("--report", metavar="PATH", help="write the full JSON report here")
    common.add_argument("--run-log", metavar="PATH",
                        help="append the report as one JSON line to this file")
    common.add_argument("--units", choices=("gb", "gib"), default="gb",
                        help="size units: gb is SI 1000^3, gib is binary 1024^3")

    shape = argparse.ArgumentParser(add_help=False)
    shape.add_argument("--batch-size", type=int, default=1, metavar="N")
    shape.add_argument("--prompt-len", type=int, default=512, metavar="N")

    parser = argparse.ArgumentParser(
        prog="elana",
        description="Profile LLM inference efficiency: memory, latency, energy, traces.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_size = sub.add_parser("size", parents=[common, shape],
                            help="compute model and cache memory footprints")
    p_size.add_argument("--arch", required=True, metavar="CONFIG.json",
                        help="architecture config document")

    def add_latency_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--backend", required=True, metavar="SPEC",
                       help="'simulated[:<config.json>]' or 'hub:<model>'")
        p.add_argument("--gen-len", type=int, default=512, metavar="N")
        p.add_argument("--metrics", default="ttft,tpot,ttlt", metavar="LIST",
                       help="comma-separated subset of ttft,tpot,ttlt")
        p.add_argument("--runs", type=int, default=DEFAULT_RUNS, metavar="N",
                       help=f"timed runs for TTFT and TPOT (default {DEFAULT_RUNS})")
        p.add_argument("--runs-ttlt", type=int, default=DEFAULT_RUNS_TTLT, metavar="N",
                       help=f"timed runs for TTLT (default {DEFAULT_RUNS_TTLT})")
        p.add_argument("--warmup", type=int, default=DEFAULT_WARMUP, metavar="N",
                       help=f"untimed warmup iterations (default {DEFAULT_WARMUP})")
        p.add_argument("--seed", type=int, default=0, metavar="N")
        p.add_argument("--energy", action="store_true", help="sample power and report J/X")
        p.add_argument("--power-source", action="append", default=[], metavar="SPEC",
                       help="repeatable: mock-const:<watts>, mock-script:<path>, "
                            "gpu:<index>, soc")
        p.add_argument("--power-interval", type=float, default=DEFAULT_SAMPLE_INTERVAL_S,
                       metavar="SECONDS", help="sampling cadence (default 0.1)")
        p.add_argument("--power-log", metavar="PATH",
                       help="write raw power samples as JSON lines")
        p.add_argument("--trace", metavar="PATH",
                       help="export execution spans (conventionally *.trace.json)")
        p.add_argument("--raw-samples", action="store_true",
                       help="embed per-run samples in the report")

    p_lat = sub.add_parser("latency", parents=[common, shape],
                           help="measure TTFT, TPOT, and TTLT on a backend")
    add_latency_flags(p_lat)

    p_all = sub.add_parser("all", parents=[common, shape],
                           help="sizes plus the full latency/energy pipeline")
    add_latency_flags(p_all)
    p_all.add_argument("--arch", metavar="CONFIG.json",
                       help="architecture config; adds the memory section")
    return parser


def _parse_metrics(raw: str) -> tuple[Metric, ...]:
    chosen = []
    for item in raw.split(","):
        name = item.strip().lower()
        if not name:
            continue
        if name not in _METRIC_NAMES:
            raise UsageError(f"unknown metric '{item}' (choose from ttft, tpot, ttlt)")
        metric = _METRIC_NAMES[name]
        if metric not in chosen:
            chosen.append(metric)
    if not chosen:
        raise UsageError("at least one metric is required")
    # run order is fixed regardless of how the list was written
    return tuple(m for m in (Metric.TTFT, Metric.TPOT, Metric.TTLT) if m in chosen)


def parse_args(argv: Optional[list[str]] = None) -> RunPlan:
    """Turn an argument vector into a validated RunPlan."""
    ns = build_parser().parse_args(argv)
    if ns.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    if ns.batch_size < 1:
        raise UsageError(f"--batch-size must be at least 1, got {ns.batch_size}")
    if ns.prompt_len < 1:
        raise UsageError(f"--prompt-len must be at least 1, got {ns.prompt_len}")

    unit_mode = UnitMode.SI if ns.units == "gb" else UnitMode.BINARY

    if ns.subcommand == "size":
        workload = Workload(batch=ns.batch_size, prompt_len=ns.prompt_len, gen_len=1)
        return RunPlan(
            subcommand="size",
            arch_path=ns.arch,
            backend_spec=None,
            workload=workload,
            runs_ttlt=1,
            metrics=(),
            energy_enabled=False,
            power_sources=(),
            power_interval_s=DEFAULT_SAMPLE_INTERVAL_S,
            power_log_path=None,
            trace_path=None,
            unit_mode=unit_mode,
            output=ns.output,
            report_path=ns.report,
            run_log_path=ns.run_log,
            raw_samples=False,
        )

    metrics = _parse_metrics(ns.metrics)
    if ns.gen_len < 1:
        raise UsageError(f"--gen-len must be at least 1, got {ns.gen_len}")
    if Metric.TPOT in metrics and ns.gen_len < 2:
        raise UsageError("--gen-len must be at least 2 when tpot is measured")
    if ns.runs < 1 or ns.runs_ttlt < 1:
        raise UsageError("--runs and --runs-ttlt must be at least 1")
    if ns.warmup < 0:
        raise UsageError("--warmup must be non-negative")
    if ns.power_interval <= 0:
        raise UsageError(f"--power-interval must be positive, got {ns.power_interval}")

    scheme = ns.backend.split(":", 1)[0]
    if scheme not in _BACKEND_SCHEMES:
        raise UsageError(
            f"unknown backend scheme '{scheme}' (expected one of {', '.join(_BACKEND_SCHEMES)})"
        )

    if ns.energy and not ns.power_source:
        raise ConfigError("--energy needs at least one --power-source")
    if ns.power_source and not ns.energy:
        raise ConfigError("--power-source given but --energy is off")
    for source in ns.power_source:
        source_scheme = source.split(":", 1)[0]
        if source_scheme not in _POWER_SCHEMES:
            raise UsageError(
                f"unknown power source scheme '{source_scheme}' "
                f"(expected one of {', '.join(_POWER_SCHEMES)})"
            )

    try:
        workload = Workload(
            batch=ns.batch_size,
            prompt_len=ns.prompt_len,
            gen_len=ns.gen_len,
            runs=ns.runs,
            warmup=ns.warmup,
            seed=ns.seed,
        )
    except ValidationError as exc:
        raise UsageError(str(exc)) from exc

    return RunPlan(
        subcommand=ns.subcommand,
        arch_path=getattr(ns, "arch", None),
        backend_spec=ns.backend,
        workload=workload,
        runs_ttlt=ns.runs_ttlt,
        metrics=metrics,
        energy_enabled=ns.energy,
        power_sources=tuple(ns.power_source),
        power_interval_s=ns.power_interval,
        power_log_path=ns.power_log,
        trace_path=ns.trace,
        unit_mode=unit_mode,
        output=ns.output,
        report_path=ns.report,
        run_log_path=ns.run_log,
        raw_samples=ns.raw_samples,
    )


def _load_arch(path: str):
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read architecture config '{path}': {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"architecture config '{path}' is not valid JSON: {exc}") from exc
    return parse_arch(doc), parse_param_inventory(doc)


def _size_section(plan: RunPlan, arch, inventory) -> SizeSection:
    cache = cache_size(arch, plan.workload.batch, plan.workload.prompt_len)
    section = SizeSection(cache=cache, unit_mode=plan.unit_mode)
    if inventory is not None:
        params, buffers = param_and_buffer_size(inventory)
        section.param_bytes = params.bytes
        section.buffer_bytes = buffers.bytes
    return section


def _strip_samples(stats):
    return dataclasses.replace(stats, samples=None)


def _run(plan: RunPlan) -> RunReport:
    created_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
    hardware = {"device_names": [], "device_count": 0, "platform": platform.platform(),
                "driver": None}

    arch = inventory = None
    if plan.arch_path is not None:
        arch, inventory = _load_arch(plan.arch_path)

    if plan.subcommand == "size":
        assert arch is not None
        return RunReport(
            tool_version=__version__,
            created_at=created_at,
            model_id=arch.model_id,
            backend_desc="none",
            hardware=hardware,
            workload=plan.workload,
            sizes=_size_section(plan, arch, inventory),
        )

    backend = resolve_backend(plan.backend_spec)
    caps = backend.caps
    hardware["device_names"] = list(caps.device_ids)
    hardware["device_count"] = len(caps.device_ids)
    workload = dataclasses.replace(plan.workload, n_devices=len(caps.device_ids))

    recorder = SpanRecorder() if plan.trace_path else None
    backend.recorder = recorder

    sampler = None
    if plan.energy_enabled:
        sources = [parse_power_source(s) for s in plan.power_sources]
        sampler = start_sampler(sources, interval_s=plan.power_interval_s, clock=backend.clock)

    flags: list[str] = []
    latencies: dict[str, object] = {}
    decomposition = None
    try:
        if Metric.TTFT in plan.metrics:
            logger.info("measuring TTFT (%d runs)", workload.runs)
            latencies[Metric.TTFT.value] = measure_ttft(
                backend, workload, sampler=sampler, recorder=recorder, flags=flags)
        if Metric.TPOT in plan.metrics:
            logger.info("measuring TPOT (%d runs)", workload.runs)
            latencies[Metric.TPOT.value] = measure_tpot(
                backend, workload, sampler=sampler, recorder=recorder, flags=flags)
        if Metric.TTLT in plan.metrics:
            w_ttlt = dataclasses.replace(workload, runs=plan.runs_ttlt)
            logger.info("measuring TTLT (%d runs)", w_ttlt.runs)
            stats, decomposition = measure_ttlt(
                backend, w_ttlt, sampler=sampler, recorder=recorder, flags=flags)
            latencies[Metric.TTLT.value] = stats
    finally:
        trace = stop_sampler(sampler) if sampler is not None else None

    energy = None
    if trace is not None:
        energy = energy_metrics(latencies, trace, workload, flags=flags)
        if plan.power_log_path:
            write_power_log(trace, plan.power_log_path)

    trace_path = None
    if recorder is not None:
        export_trace_json(recorder.events(), plan.trace_path)
        trace_path = plan.trace_path

    if not plan.raw_samples:
        latencies = {label: _strip_samples(stats) for label, stats in latencies.items()}

    sizes = None
    model_id = backend.model_id
    if arch is not None:
        sizes = _size_section(plan, arch, inventory)
        model_id = arch.model_id

    return RunReport(
        tool_version=__version__,
        created_at=created_at,
        model_id=model_id,
        backend_desc=plan.backend_spec,
        hardware=hardware,
        workload=workload,
        sizes=sizes,
        latencies=latencies,
        energy=energy,
        ttlt_decomposition=decomposition,
        trace_path=trace_path,
        flags=flags,
    )


def _emit(plan: RunPlan, report: RunReport) -> None:
    doc = emit_json(report)
    if plan.output in ("table", "both"):
        sys.stdout.write(render_table(report))
    if plan.output in ("json", "both"):
        sys.stdout.write(json.dumps(doc, indent=2) + "\n")
    if plan.report_path:
        Path(plan.report_path).write_text(json.dumps(doc, indent=2) + "\n")
    if plan.run_log_path:
        append_run_log(report, plan.run_log_path)


def execute(plan: RunPlan) -> int:
    """Run the plan; returns the process exit code."""
    try:
        report = _run(plan)
        _emit(plan, report)
    except (UsageError, ConfigError) as exc:
        print(f"elana: {exc}", file=sys.stderr)
        return 2
    except ElanaError as exc:
        print(f"elana: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"elana: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    try:
        plan = parse_args(argv)
    except (UsageError, ConfigError) as exc:
        print(f"elana: {exc}", file=sys.stderr)
        return 2
    return execute(plan)


if __name__ == "__main__":
    sys.exit(main())
