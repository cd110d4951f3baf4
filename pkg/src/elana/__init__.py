"""elana: an inference efficiency profiler for LLM serving stacks.

Measures what a deployment actually pays per request: model and cache
memory footprints, prefill/decode/end-to-end latency, per-phase energy,
and kernel-level execution traces, against real or simulated backends.
"""

from ._version import __version__
from .backends import (
    BackendCaps,
    InferenceBackend,
    SimulatedBackend,
    SimulatedBackendConfig,
    TokenBatch,
    generate_random_prompts,
    resolve_backend,
)
from .energy import (
    EnergyMetrics,
    PowerSample,
    PowerSourceDesc,
    PowerSourceKind,
    PowerTrace,
    energy_metrics,
    mean_power,
    parse_power_source,
    start_sampler,
    stop_sampler,
)
from .errors import (
    BackendError,
    CapabilityError,
    ConfigError,
    ElanaError,
    MeasurementError,
    SchemaError,
    UsageError,
    ValidationError,
)
from .latency import (
    LatencyStats,
    Metric,
    TimingSample,
    TtltDecomposition,
    Workload,
    measure_tpot,
    measure_ttft,
    measure_ttlt,
    summarize,
)
from .report import RunReport, SizeSection, append_run_log, emit_json, parse_report, render_table
from .sizing import (
    ArchConfig,
    ByteSize,
    CacheBreakdown,
    LayerDesc,
    LayerKind,
    ParamEntry,
    ParamInventory,
    UnitMode,
    cache_size,
    format_bytes,
    param_and_buffer_size,
    parse_arch,
    parse_param_inventory,
)
from .tracing import OpAggregate, SpanRecorder, TraceEvent, aggregate_ops, export_trace_json, load_trace_json

__all__ = [name for name in dir() if not name.startswith("_")]
