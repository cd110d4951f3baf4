"""Timed harnesses for prefill, decode, and end-to-end latency.

Three metrics, all reported in milliseconds:

* TTFT: prompt ingestion until the first output token id is available.
* TPOT: mean interval between consecutive token-availability fences
  during steady-state decode, pooled across runs.
* TTLT: one contiguous window covering prefill plus the remaining
  decode steps of a full request.

Every timed window is bracketed by a completion fence and a reading of
the backend's monotonic clock, so device work cannot leak across window
edges. Warmup iterations run the same code paths and are discarded.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .backends.base import InferenceBackend, generate_random_prompts
from .errors import BackendError, CapabilityError, ValidationError

if TYPE_CHECKING:
    from .energy import SamplerHandle
    from .tracing import SpanRecorder

logger = logging.getLogger(__name__)

#: Timing slack granted to the host scheduler in tight assertions.
DEFAULT_SCHEDULER_TOLERANCE_MS = 0.5

#: Flag appended when decode runs without its fast path.
DECODE_GRAPH_FALLBACK = "decode-graph-fallback"


class Metric(str, enum.Enum):
    TTFT = "TTFT"
    TPOT = "TPOT"
    TTLT = "TTLT"


@dataclass(frozen=True)
class Workload:
    """One measurement configuration."""

    batch: int
    prompt_len: int
    gen_len: int
    n_devices: int = 1
    runs: int = 1
    warmup: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch < 1:
            raise ValidationError(f"batch must be at least 1, got {self.batch}")
        if self.prompt_len < 1:
            raise ValidationError(f"prompt_len must be at least 1, got {self.prompt_len}")
        if self.gen_len < 1:
            raise ValidationError(f"gen_len must be at least 1, got {self.gen_len}")
        if self.n_devices < 1:
            raise ValidationError(f"n_devices must be at least 1, got {self.n_devices}")
        if self.runs < 1:
            raise ValidationError(f"runs must be at least 1, got {self.runs}")
        if self.warmup < 0:
            raise ValidationError(f"warmup must be non-negative, got {self.warmup}")


@dataclass(frozen=True)
class TimingSample:
    """One timed window, in backend clock nanoseconds."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.end < self.start:
            raise ValidationError("timing sample ends before it starts")

    @property
    def duration_ms(self) -> float:
        return (self.end - self.start) / 1e6


@dataclass
class LatencyStats:
    """Summary of one metric's timed samples."""

    metric: Metric
    samples: Optional[list[float]]
    mean_ms: float
    std_ms: float
    min_ms: float
    max_ms: float
    p50_ms: float
    p90_ms: float
    p99_ms: float
    runs: int
    warmup: int
    window: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class TtltDecomposition:
    """Mean split of the end-to-end window at first-token availability."""

    ttft_portion_ms: float
    decode_portion_ms: float


def summarize(
    samples: Sequence[float],
    metric: Metric,
    w: Workload,
    window: tuple[int, int] = (0, 0),
) -> LatencyStats:
    """Reduce raw millisecond samples to summary statistics.

    Mean is arithmetic, std is the population value, and percentiles are
    exact order statistics with linear interpolation between ranks.
    """
    if len(samples) == 0:
        raise ValidationError("cannot summarize an empty sample list")
    arr = np.asarray(samples, dtype=float)
    p50, p90, p99 = np.percentile(arr, [50, 90, 99])
    return LatencyStats(
        metric=metric,
        samples=[float(s) for s in samples],
        mean_ms=float(arr.mean()),
        std_ms=float(arr.std()),
        min_ms=float(arr.min()),
        max_ms=float(arr.max()),
        p50_ms=float(p50),
        p90_ms=float(p90),
        p99_ms=float(p99),
        runs=w.runs,
        warmup=w.warmup,
        window=window,
    )


def _run_seed(base: int, index: int) -> int:
    # Stable per-run prompt seeds derived from the workload seed.
    return (base * 1_000_003 + index) & 0x7FFF_FFFF_FFFF_FFFF


def _rewrap(metric: Metric, run: int, exc: BackendError) -> BackendError:
    wrapped = BackendError(f"{metric.value} run {run}: {exc}")
    wrapped.__cause__ = exc
    return wrapped


def measure_ttft(
    backend: InferenceBackend,
    w: Workload,
    *,
    sampler: Optional["SamplerHandle"] = None,
    recorder: Optional["SpanRecorder"] = None,
    flags: Optional[list[str]] = None,
) -> LatencyStats:
    """Time prefill until the first token id is available.

    Each timed run uses freshly generated prompts with a seed derived
    from w.seed, so caches cannot learn the prompt. The decode fast
    path is never prepared here; prefill must run cold of it.
    """
    vocab = backend.caps.vocab_size
    for i in range(w.warmup):
        prompts = generate_random_prompts(vocab, w.batch, w.prompt_len, _run_seed(w.seed, w.runs + i))
        backend.prefill(prompts)
        backend.synchronize()

    samples: list[float] = []
    if sampler is not None:
        sampler.mark_phase_start(Metric.TTFT.value)
    phase_start = backend.clock()
    for i in range(w.runs):
        prompts = generate_random_prompts(vocab, w.batch, w.prompt_len, _run_seed(w.seed, i))
        backend.synchronize()
        t0 = backend.clock()
        try:
            backend.prefill(prompts)
        except BackendError as exc:
            raise _rewrap(Metric.TTFT, i, exc) from exc
        backend.synchronize()
        t1 = backend.clock()
        samples.append(TimingSample(t0, t1).duration_ms)
        if recorder is not None:
            recorder.record_span(f"ttft.run{i}", "harness", t0, t1 - t0)
    phase_end = backend.clock()
    if sampler is not None:
        sampler.mark_phase_end(Metric.TTFT.value)
    return summarize(samples, Metric.TTFT, w, window=(phase_start, phase_end))


def measure_tpot(
    backend: InferenceBackend,
    w: Workload,
    *,
    sampler: Optional["SamplerHandle"] = None,
    recorder: Optional["SpanRecorder"] = None,
    flags: Optional[list[str]] = None,
) -> LatencyStats:
    """Time steady-state decode intervals.

    Each run prefills once (untimed scaffolding), runs w.warmup untimed
    decode steps, then times gen_len - 1 consecutive step intervals.
    When the backend offers a decode fast path it is prepared up front;
    refusal downgrades to plain decode and records a fallback flag.
    """
    if w.gen_len < 2:
        raise ValidationError("TPOT needs gen_len of at least 2 (the first token is prefill's)")
    vocab = backend.caps.vocab_size

    prepared = False
    if backend.caps.supports_decode_graph:
        try:
            backend.prepare_decode(w)
            prepared = True
        except CapabilityError as exc:
            logger.info("decode fast path refused, falling back: %s", exc)
    if not prepared:
        if flags is not None and DECODE_GRAPH_FALLBACK not in flags:
            flags.append(DECODE_GRAPH_FALLBACK)

    samples: list[float] = []
    if sampler is not None:
        sampler.mark_phase_start(Metric.TPOT.value)
    phase_start = backend.clock()
    for i in range(w.runs):
        prompts = generate_random_prompts(vocab, w.batch, w.prompt_len, _run_seed(w.seed, i))
        try:
            state, _ = backend.prefill(prompts)
            backend.synchronize()
            for _ in range(w.warmup):
                backend.decode_step(state)
            backend.synchronize()
            run_start = backend.clock()
            t_prev = run_start
            for _ in range(w.gen_len - 1):
                backend.decode_step(state)
                backend.synchronize()
                t = backend.clock()
                samples.append(TimingSample(t_prev, t).duration_ms)
                t_prev = t
        except BackendError as exc:
            raise _rewrap(Metric.TPOT, i, exc) from exc
        if recorder is not None:
            recorder.record_span(f"tpot.run{i}.decode", "harness", run_start, t_prev - run_start)
    phase_end = backend.clock()
    if sampler is not None:
        sampler.mark_phase_end(Metric.TPOT.value)
    return summarize(samples, Metric.TPOT, w, window=(phase_start, phase_end))


def measure_ttlt(
    backend: InferenceBackend,
    w: Workload,
    *,
    sampler: Optional["SamplerHandle"] = None,
    recorder: Optional["SpanRecorder"] = None,
    flags: Optional[list[str]] = None,
) -> tuple[LatencyStats, TtltDecomposition]:
    """Time full requests end to end.

    One contiguous window per run covers prefill plus gen_len - 1 decode
    steps, with the first-token fence recorded inside it so the total
    splits into a prefill portion and a decode portion. The decode fast
    path is never prepared here because the prefill is part of the timed
    window; a preparation done by an earlier decode phase on the same
    instance naturally stays in effect.
    """
    vocab = backend.caps.vocab_size
    for i in range(w.warmup):
        # Warmup runs the full request shape, untimed.
        prompts = generate_random_prompts(vocab, w.batch, w.prompt_len, _run_seed(w.seed, w.runs + i))
        state, _ = backend.prefill(prompts)
        for _ in range(w.gen_len - 1):
            backend.decode_step(state)
        backend.synchronize()

    totals: list[float] = []
    ttft_parts: list[float] = []
    decode_parts: list[float] = []
    if sampler is not None:
        sampler.mark_phase_start(Metric.TTLT.value)
    phase_start = backend.clock()
    for i in range(w.runs):
        prompts = generate_random_prompts(vocab, w.batch, w.prompt_len, _run_seed(w.seed, i))
        backend.synchronize()
        t0 = backend.clock()
        try:
            state, _ = backend.prefill(prompts)
            backend.synchronize()
            t_first = backend.clock()
            for _ in range(w.gen_len - 1):
                backend.decode_step(state)
            backend.synchronize()
            t_end = backend.clock()
        except BackendError as exc:
            raise _rewrap(Metric.TTLT, i, exc) from exc
        totals.append(TimingSample(t0, t_end).duration_ms)
        ttft_parts.append(TimingSample(t0, t_first).duration_ms)
        decode_parts.append(TimingSample(t_first, t_end).duration_ms)
        if recorder is not None:
            recorder.record_span(f"ttlt.run{i}", "harness", t0, t_end - t0)
    phase_end = backend.clock()
    if sampler is not None:
        sampler.mark_phase_end(Metric.TTLT.value)

    stats = summarize(totals, Metric.TTLT, w, window=(phase_start, phase_end))
    decomposition = TtltDecomposition(
        ttft_portion_ms=float(np.mean(ttft_parts)),
        decode_portion_ms=float(np.mean(decode_parts)),
    )
    return stats, decomposition
