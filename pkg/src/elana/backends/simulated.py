"""A deterministic simulated backend.

The simulator turns the backend contract into configured durations so
the whole measurement pipeline can be verified on any machine. Two time
modes exist:

* "real" (default): calls actually take the configured wall time. The
  waits end with a short spin so measured durations land well inside
  the scheduler tolerance the harness tests assume.
* "virtual": nothing sleeps; the backend advances a private monotonic
  clock by exactly the computed duration. Reports produced against the
  same config and seeds become identical run to run.

Token output is a pure function of the config seed, so preparing the
decode fast path changes step durations and nothing else.
"""

from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass
from math import isfinite
from typing import TYPE_CHECKING, Any, Mapping

import numpy as np

from ..errors import BackendError, CapabilityError, SchemaError, ValidationError
from .base import BackendCaps, InferenceBackend, TokenBatch

if TYPE_CHECKING:
    from ..latency import Workload

_TIME_MODES = ("real", "virtual")

# Tail of each wait that is spun instead of slept. time.sleep alone can
# overshoot by the scheduler quantum, the same order as the tolerances
# the timing tests hold the harness to; virtualized hosts are the worst.
_SPIN_WINDOW_NS = 400_000

_MASK64 = 0xFFFF_FFFF_FFFF_FFFF
_MIX2 = np.uint64(0xBF58476D1CE4E5B9)
_MIX3 = np.uint64(0x94D049BB133111EB)


def _precise_sleep_ns(duration_ns: int) -> None:
    deadline = time.perf_counter_ns() + duration_ns
    while True:
        remaining = deadline - time.perf_counter_ns()
        if remaining <= 0:
            return
        if remaining > _SPIN_WINDOW_NS:
            time.sleep((remaining - _SPIN_WINDOW_NS) / 1e9)


def _token_wave(seed: int, position: int, batch: int, vocab: int) -> np.ndarray:
    # Tokens are a pure integer mix of (seed, position, lane): cheap enough
    # to live inside timed windows, and structurally unaffected by whether
    # the decode fast path was prepared.
    base = (seed * 0x9E3779B97F4A7C15 + position * 0xBF58476D1CE4E5B9) & _MASK64
    z = np.uint64(base) + np.arange(batch, dtype=np.uint64) * _MIX3
    z ^= z >> np.uint64(30)
    z = z * _MIX2
    z ^= z >> np.uint64(27)
    z = z * _MIX3
    z ^= z >> np.uint64(31)
    return (z % np.uint64(vocab)).astype(np.int64)


@dataclass(frozen=True)
class SimulatedBackendConfig:
    """Timing model plus instance furniture for the simulator.

    prefill duration is prefill_base_ms + prefill_per_token_ms * batch *
    prompt length; decode steps take decode_step_ms, scaled by
    decode_graph_speedup once the step shape has been prepared. jitter
    adds seeded uniform noise in [-jitter_ms, +jitter_ms] per call, and
    warmup_penalty_ms is added to the first call on the instance only.
    """

    prefill_base_ms: float = 5.0
    prefill_per_token_ms: float = 0.01
    decode_step_ms: float = 10.0
    decode_graph_speedup: float = 0.8
    jitter_ms: float = 0.0
    warmup_penalty_ms: float = 0.0
    seed: int = 0
    vocab_size: int = 32000
    supports_decode_graph: bool = True
    n_devices: int = 1
    time_mode: str = "real"

    def __post_init__(self) -> None:
        for name in ("prefill_base_ms", "prefill_per_token_ms", "decode_step_ms",
                     "jitter_ms", "warmup_penalty_ms"):
            value = getattr(self, name)
            if not isfinite(value) or value < 0:
                raise ValidationError(f"{name} must be a finite non-negative number")
        if not (0.0 < self.decode_graph_speedup <= 1.0):
            raise ValidationError(
                f"decode_graph_speedup must be in (0, 1], got {self.decode_graph_speedup}"
            )
        if self.vocab_size < 2:
            raise ValidationError("vocab_size must be at least 2")
        if self.n_devices < 1:
            raise ValidationError("n_devices must be at least 1")
        if self.time_mode not in _TIME_MODES:
            raise ValidationError(f"time_mode must be one of {_TIME_MODES}")

    @classmethod
    def from_document(cls, doc: Mapping) -> "SimulatedBackendConfig":
        if not isinstance(doc, Mapping):
            raise SchemaError("simulated backend config must be a key-value document")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise SchemaError(f"unknown simulated backend fields: {sorted(unknown)}")
        return cls(**dict(doc))


class _SimState:
    """Decode state for one prefilled batch; position indexes the next token."""

    __slots__ = ("owner", "batch", "position")

    def __init__(self, owner: "SimulatedBackend", batch: int, position: int) -> None:
        self.owner = owner
        self.batch = batch
        self.position = position


class SimulatedBackend(InferenceBackend):
    def __init__(self, config: SimulatedBackendConfig | None = None) -> None:
        self._cfg = config or SimulatedBackendConfig()
        self._caps = BackendCaps(
            vocab_size=self._cfg.vocab_size,
            supports_decode_graph=self._cfg.supports_decode_graph,
            device_ids=tuple(f"sim{i}" for i in range(self._cfg.n_devices)),
        )
        self._jitter_rng = random.Random(self._cfg.seed)
        self._virtual_ns = 0
        self._warmed = False
        self._prepared_batches: set[int] = set()
        self._busy = threading.Lock()

    @property
    def caps(self) -> BackendCaps:
        return self._caps

    @property
    def config(self) -> SimulatedBackendConfig:
        return self._cfg

    @property
    def model_id(self) -> str:
        return "simulated"

    def describe(self) -> str:
        c = self._cfg
        return (
            f"simulated(prefill={c.prefill_base_ms}ms+{c.prefill_per_token_ms}ms/tok, "
            f"decode={c.decode_step_ms}ms, speedup={c.decode_graph_speedup}, "
            f"time={c.time_mode})"
        )

    def clock(self) -> int:
        if self._cfg.time_mode == "virtual":
            return self._virtual_ns
        return time.perf_counter_ns()

    def _jitter_ms(self) -> float:
        if self._cfg.jitter_ms == 0.0:
            return 0.0
        return self._jitter_rng.uniform(-self._cfg.jitter_ms, self._cfg.jitter_ms)

    def _take_warmup_penalty_ms(self) -> float:
        if self._warmed:
            return 0.0
        self._warmed = True
        return self._cfg.warmup_penalty_ms

    def _finish(self, start_ns: int, duration_ms: float, span_name: str) -> None:
        """Make the op last duration_ms from start_ns, then log its span.

        Called after the op's bookkeeping so that cost is absorbed into
        the simulated duration, the way device work overlaps host work.
        """
        duration_ns = max(int(round(duration_ms * 1e6)), 0)
        if self._cfg.time_mode == "virtual":
            self._virtual_ns += duration_ns
        else:
            remaining = start_ns + duration_ns - time.perf_counter_ns()
            if remaining > 0:
                _precise_sleep_ns(remaining)
        if self.recorder is not None:
            self.recorder.record_span(span_name, "backend", start_ns, duration_ns)

    def _acquire(self) -> None:
        if not self._busy.acquire(blocking=False):
            raise BackendError("backend instance is busy; drive it from one context at a time")

    def prefill(self, prompts: TokenBatch) -> tuple[Any, np.ndarray]:
        self._acquire()
        try:
            start = self.clock()
            if prompts.length < 1:
                raise ValidationError("prompts must contain at least one token")
            if int(prompts.token_ids.max()) >= self._cfg.vocab_size:
                raise ValidationError("prompt contains out-of-vocabulary token id")
            duration = (
                self._cfg.prefill_base_ms
                + self._cfg.prefill_per_token_ms * prompts.batch * prompts.length
                + self._take_warmup_penalty_ms()
                + self._jitter_ms()
            )
            first = _token_wave(self._cfg.seed, prompts.length, prompts.batch,
                                self._cfg.vocab_size)
            state = _SimState(self, prompts.batch, prompts.length + 1)
            self._finish(start, max(duration, 0.0), "sim.prefill")
            return state, first
        finally:
            self._busy.release()

    def decode_step(self, state: Any) -> np.ndarray:
        self._acquire()
        try:
            start = self.clock()
            if not isinstance(state, _SimState) or state.owner is not self:
                raise ValidationError("decode state does not belong to this backend instance")
            step_ms = self._cfg.decode_step_ms
            if state.batch in self._prepared_batches:
                step_ms *= self._cfg.decode_graph_speedup
            duration = step_ms + self._take_warmup_penalty_ms() + self._jitter_ms()
            tokens = _token_wave(self._cfg.seed, state.position, state.batch,
                                 self._cfg.vocab_size)
            state.position += 1
            self._finish(start, max(duration, 0.0), "sim.decode_step")
            return tokens
        finally:
            self._busy.release()

    def prepare_decode(self, workload: "Workload") -> None:
        if not self._cfg.supports_decode_graph:
            raise CapabilityError("this backend has no decode fast path")
        self._prepared_batches.add(workload.batch)

    def synchronize(self) -> None:
        # Simulated work completes inside the call itself.
        pass
