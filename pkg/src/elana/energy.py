"""Concurrent power sampling and per-phase energy accounting.

A sampler thread polls every configured power source on a fixed cadence
(0.1 s by default) and appends timestamped watt readings to an
append-only log. The only state shared with the measurement thread is
that log, the stop event, and the phase marks, so sampling does not
perturb what is being measured.

Energy is attributed per phase: the phase-mean power of each device is
averaged over the phase window, summed across devices, and multiplied
by the phase's measured mean latency. J/Prompt comes from the prefill
phase, J/Token from the decode phase, J/Request from the end-to-end
phase. No idle baseline is subtracted; the raw phase means are kept in
the result so consumers can do their own accounting.
"""

from __future__ import annotations

import enum
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, MeasurementError, SchemaError, ValidationError
from .latency import LatencyStats, Metric, Workload

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_INTERVAL_S = 0.1

#: Flag appended when a window had too few samples and the enclosing
#: phase mean stood in for it.
POWER_WINDOW_FALLBACK = "power-window-fallback"


class PowerSourceKind(enum.Enum):
    DISCRETE_GPU = "gpu"
    SOC_SENSOR = "soc"
    MOCK_CONSTANT = "mock-const"
    MOCK_SCRIPTED = "mock-script"


@dataclass(frozen=True)
class PowerSourceDesc:
    """One power source to poll."""

    kind: PowerSourceKind
    watts: Optional[float] = None
    breakpoints: Optional[tuple[tuple[float, float], ...]] = None
    device_index: Optional[int] = None
    label: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind is PowerSourceKind.MOCK_CONSTANT:
            if self.watts is None or self.watts < 0:
                raise ValidationError("constant mock source needs non-negative watts")
        elif self.kind is PowerSourceKind.MOCK_SCRIPTED:
            if not self.breakpoints:
                raise ValidationError("scripted mock source needs at least one breakpoint")
            times = [t for t, _ in self.breakpoints]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValidationError("scripted breakpoints must have strictly increasing times")
            if any(w < 0 for _, w in self.breakpoints):
                raise ValidationError("scripted watts must be non-negative")
        elif self.kind is PowerSourceKind.DISCRETE_GPU:
            if self.device_index is None or self.device_index < 0:
                raise ValidationError("gpu source needs a non-negative device index")


def parse_power_source(spec: str) -> PowerSourceDesc:
    """Parse a source selection string.

    "mock-const:<watts>", "mock-script:<breakpoints.json>", "gpu:<index>",
    or "soc". A breakpoint file is a JSON list of [seconds, watts] pairs
    relative to sampler start, interpolated linearly and clamped at the
    ends.
    """
    if spec == "soc":
        return PowerSourceDesc(kind=PowerSourceKind.SOC_SENSOR)
    head, sep, tail = spec.partition(":")
    if not sep:
        raise ValidationError(f"unknown power source '{spec}'")
    if head == "mock-const":
        try:
            watts = float(tail)
        except ValueError as exc:
            raise ValidationError(f"bad wattage in power source '{spec}'") from exc
        return PowerSourceDesc(kind=PowerSourceKind.MOCK_CONSTANT, watts=watts)
    if head == "mock-script":
        try:
            doc = json.loads(Path(tail).read_text())
        except OSError as exc:
            raise ValidationError(f"cannot read power script '{tail}': {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"power script '{tail}' is not valid JSON: {exc}") from exc
        if isinstance(doc, Mapping):
            doc = doc.get("breakpoints")
        if not isinstance(doc, Sequence):
            raise SchemaError(f"power script '{tail}' must hold a list of [t, watts] pairs")
        points = []
        for item in doc:
            if not isinstance(item, Sequence) or len(item) != 2:
                raise SchemaError(f"power script '{tail}' must hold [t, watts] pairs")
            points.append((float(item[0]), float(item[1])))
        return PowerSourceDesc(kind=PowerSourceKind.MOCK_SCRIPTED, breakpoints=tuple(points))
    if head == "gpu":
        try:
            index = int(tail)
        except ValueError as exc:
            raise ValidationError(f"bad device index in power source '{spec}'") from exc
        return PowerSourceDesc(kind=PowerSourceKind.DISCRETE_GPU, device_index=index)
    raise ValidationError(f"unknown power source '{spec}'")


@dataclass(frozen=True)
class PowerSample:
    t_ns: int
    device_id: str
    watts: float

    def __post_init__(self) -> None:
        if self.watts < 0:
            raise ValidationError("watts must be non-negative")


@dataclass(frozen=True)
class PowerTrace:
    """Everything one sampling session produced."""

    samples: tuple[PowerSample, ...]
    interval_s: float
    devices: tuple[str, ...]
    phases: dict[str, tuple[int, int]]
    epoch_ns: int

    def device_samples(self, device_id: str) -> list[PowerSample]:
        return [s for s in self.samples if s.device_id == device_id]

    def cadence_gaps(self, low: float = 0.5, high: float = 3.0) -> list[tuple[str, float]]:
        """Inter-sample gaps outside [low, high] times the interval, per device."""
        bad = []
        for dev in self.devices:
            ts = [s.t_ns for s in self.device_samples(dev)]
            for a, b in zip(ts, ts[1:]):
                gap_s = (b - a) / 1e9
                if not (low * self.interval_s <= gap_s <= high * self.interval_s):
                    bad.append((dev, gap_s))
        return bad


class _ConstantReader:
    def __init__(self, watts: float) -> None:
        self._watts = watts

    def read(self, elapsed_s: float) -> float:
        return self._watts


class _ScriptedReader:
    def __init__(self, breakpoints: Sequence[tuple[float, float]]) -> None:
        self._times = np.asarray([t for t, _ in breakpoints], dtype=float)
        self._watts = np.asarray([w for _, w in breakpoints], dtype=float)

    def read(self, elapsed_s: float) -> float:
        # np.interp clamps outside the breakpoint range.
        return float(np.interp(elapsed_s, self._times, self._watts))


class _GpuReader:
    """Board power via the NVIDIA management library."""

    def __init__(self, index: int) -> None:
        try:
            import pynvml
        except ImportError as exc:
            raise MeasurementError(
                f"power source gpu:{index} unavailable: pynvml is not installed"
            ) from exc
        try:
            pynvml.nvmlInit()
            self._handle = pynvml.nvmlDeviceGetHandleByIndex(index)
            self._pynvml = pynvml
            self.read(0.0)
        except Exception as exc:
            raise MeasurementError(f"power source gpu:{index} unavailable: {exc}") from exc

    def read(self, elapsed_s: float) -> float:
        # nvml reports milliwatts
        return self._pynvml.nvmlDeviceGetPowerUsage(self._handle) / 1000.0


class _SocReader:
    """Total board power from the first readable hwmon power rail."""

    def __init__(self) -> None:
        candidates = sorted(Path("/sys/class/hwmon").glob("hwmon*/power1_input"))
        for path in candidates:
            try:
                path.read_text()
            except OSError:
                continue
            self._path = path
            return
        raise MeasurementError("power source soc unavailable: no readable hwmon power rail")

    def read(self, elapsed_s: float) -> float:
        # hwmon reports microwatts
        return int(self._path.read_text().strip()) / 1e6


def _build_reader(desc: PowerSourceDesc):
    if desc.kind is PowerSourceKind.MOCK_CONSTANT:
        return _ConstantReader(desc.watts)
    if desc.kind is PowerSourceKind.MOCK_SCRIPTED:
        return _ScriptedReader(desc.breakpoints)
    if desc.kind is PowerSourceKind.DISCRETE_GPU:
        return _GpuReader(desc.device_index)
    return _SocReader()


class SamplerHandle:
    """Owns the sampler thread; stop() yields the finished trace."""

    def __init__(self, readers: list[tuple[str, object]], interval_s: float,
                 clock: Callable[[], int]) -> None:
        self._readers = readers
        self._interval_s = interval_s
        self._clock = clock
        self._epoch_ns = clock()
        self._samples: list[PowerSample] = []
        self._phases: dict[str, tuple[int, int]] = {}
        self._open_phases: dict[str, int] = {}
        self._stop = threading.Event()
        self._trace: Optional[PowerTrace] = None
        self._thread = threading.Thread(target=self._loop, name="power-sampler", daemon=True)

    def _start(self) -> None:
        self._thread.start()

    def _loop(self) -> None:
        last_ts: dict[str, int] = {}
        next_tick = time.perf_counter()
        while True:
            ts = self._clock()
            elapsed_s = (ts - self._epoch_ns) / 1e9
            for device_id, reader in self._readers:
                try:
                    watts = reader.read(elapsed_s)
                except Exception:
                    logger.warning("power reader for %s failed", device_id, exc_info=True)
                    continue
                # keep per-device timestamps strictly increasing; under a
                # frozen clock repeated readings carry no information
                if ts > last_ts.get(device_id, -1):
                    self._samples.append(PowerSample(t_ns=ts, device_id=device_id, watts=watts))
                    last_ts[device_id] = ts
            next_tick += self._interval_s
            now = time.perf_counter()
            if next_tick <= now:
                # fell behind; skip the missed ticks instead of bunching samples
                next_tick = now + self._interval_s
            if self._stop.wait(next_tick - now):
                return

    def mark_phase_start(self, label: str) -> None:
        if label in self._phases or label in self._open_phases:
            raise ConfigError(f"phase '{label}' was already marked")
        self._open_phases[label] = self._clock()

    def mark_phase_end(self, label: str) -> None:
        if label not in self._open_phases:
            raise ConfigError(f"phase '{label}' was never started")
        start = self._open_phases.pop(label)
        self._phases[label] = (start, self._clock())

    def stop(self) -> PowerTrace:
        if self._trace is not None:
            return self._trace
        self._stop.set()
        self._thread.join()
        now = self._clock()
        for label, start in self._open_phases.items():
            logger.warning("phase '%s' was still open at sampler stop", label)
            self._phases[label] = (start, now)
        self._open_phases.clear()
        self._trace = PowerTrace(
            samples=tuple(self._samples),
            interval_s=self._interval_s,
            devices=tuple(dev for dev, _ in self._readers),
            phases=dict(self._phases),
            epoch_ns=self._epoch_ns,
        )
        return self._trace


def start_sampler(
    sources: Sequence[PowerSourceDesc],
    interval_s: float = DEFAULT_SAMPLE_INTERVAL_S,
    clock: Callable[[], int] = time.perf_counter_ns,
) -> SamplerHandle:
    """Construct readers for every source and start the sampler thread.

    An unreachable device source raises at startup, naming the device,
    rather than producing a silent hole in the data later.
    """
    if interval_s <= 0:
        raise ValidationError(f"interval_s must be positive, got {interval_s}")
    if not sources:
        raise ValidationError("at least one power source is required")
    readers: list[tuple[str, object]] = []
    used: set[str] = set()
    for i, desc in enumerate(sources):
        device_id = desc.label or f"{desc.kind.value}{i}"
        if device_id in used:
            raise ValidationError(f"duplicate power source label '{device_id}'")
        used.add(device_id)
        readers.append((device_id, _build_reader(desc)))
    handle = SamplerHandle(readers, interval_s, clock)
    handle._start()
    return handle


def stop_sampler(handle: SamplerHandle) -> PowerTrace:
    return handle.stop()


def _enclosing_phase(trace: PowerTrace, window: tuple[int, int]) -> Optional[tuple[int, int]]:
    start, end = window
    best = None
    for p_start, p_end in trace.phases.values():
        if p_start <= start and end <= p_end:
            if best is None or (p_end - p_start) < (best[1] - best[0]):
                best = (p_start, p_end)
    return best


def mean_power(
    trace: PowerTrace,
    window: tuple[int, int],
    devices: Optional[Sequence[str]] = None,
    flags: Optional[list[str]] = None,
) -> dict[str, float]:
    """Arithmetic per-device mean power over a closed window.

    A device with fewer than two samples inside the window falls back to
    the mean over the enclosing phase window and records a flag; a phase
    with no samples at all is a measurement error.
    """
    start, end = window
    if end <= start:
        raise ValidationError("power window must be non-empty")
    wanted = tuple(devices) if devices is not None else trace.devices
    result: dict[str, float] = {}
    fell_back = False
    for dev in wanted:
        in_window = [s.watts for s in trace.samples
                     if s.device_id == dev and start <= s.t_ns <= end]
        if len(in_window) >= 2:
            result[dev] = float(np.mean(in_window))
            continue
        phase = _enclosing_phase(trace, window)
        if phase is not None:
            p_start, p_end = phase
            candidates = [s.watts for s in trace.samples
                          if s.device_id == dev and p_start <= s.t_ns <= p_end]
        else:
            candidates = in_window
        if not candidates:
            raise MeasurementError(f"no power samples for device '{dev}' in the phase window")
        result[dev] = float(np.mean(candidates))
        fell_back = True
    if fell_back and flags is not None and POWER_WINDOW_FALLBACK not in flags:
        flags.append(POWER_WINDOW_FALLBACK)
    return result


@dataclass
class EnergyMetrics:
    """Per-phase energy figures, joules."""

    j_per_prompt: Optional[float] = None
    j_per_token: Optional[float] = None
    j_per_request: Optional[float] = None
    mean_power_w: dict[str, dict[str, float]] = field(default_factory=dict)
    phase_windows: dict[str, tuple[int, int]] = field(default_factory=dict)


_METRIC_FIELD = {
    Metric.TTFT: "j_per_prompt",
    Metric.TPOT: "j_per_token",
    Metric.TTLT: "j_per_request",
}


def energy_metrics(
    lat: Mapping[Metric | str, LatencyStats],
    trace: PowerTrace,
    w: Workload,
    flags: Optional[list[str]] = None,
) -> EnergyMetrics:
    """Combine latency means with phase power means into J/X figures.

    For each measured metric the phase window marked under the metric's
    name is located in the trace, per-device mean power over that window
    is summed, and the sum is multiplied by the metric's mean latency in
    seconds.
    """
    out = EnergyMetrics()
    for key, stats in lat.items():
        metric = Metric(key)
        label = metric.value
        if label not in trace.phases:
            raise ConfigError(f"the sampler never marked a '{label}' phase")
        window = trace.phases[label]
        per_device = mean_power(trace, window, flags=flags)
        total_watts = float(sum(per_device.values()))
        joules = total_watts * (stats.mean_ms / 1000.0)
        setattr(out, _METRIC_FIELD[metric], joules)
        out.mean_power_w[label] = per_device
        out.phase_windows[label] = window
    return out


def write_power_log(trace: PowerTrace, path: str | Path) -> None:
    """Persist the raw samples as line-delimited JSON records."""
    with open(path, "w") as fh:
        for s in trace.samples:
            fh.write(json.dumps({"t_ns": s.t_ns, "device_id": s.device_id, "watts": s.watts}))
            fh.write("\n")
