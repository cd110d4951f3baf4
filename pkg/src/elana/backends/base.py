"""The backend contract the measurement harnesses drive.

A backend wraps one loaded model (real or simulated) and exposes the
minimal surface timing needs: prefill, single decode steps, an optional
decode fast-path preparation hook, a completion fence, and a monotonic
clock in the backend's own time domain. One measurement context drives
an instance at a time; concurrent calls are rejected where detectable.
"""

from __future__ import annotations

import abc
import time
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Optional

import numpy as np

from ..errors import ValidationError

if TYPE_CHECKING:
    from ..latency import Workload
    from ..tracing import SpanRecorder


@dataclass(frozen=True)
class TokenBatch:
    """A (batch, length) matrix of non-negative token ids."""

    token_ids: np.ndarray

    def __post_init__(self) -> None:
        ids = np.asarray(self.token_ids)
        if ids.ndim != 2:
            raise ValidationError(f"token batch must be 2-D, got shape {ids.shape}")
        if not np.issubdtype(ids.dtype, np.integer):
            raise ValidationError("token ids must be integers")
        if ids.size and int(ids.min()) < 0:
            raise ValidationError("token ids must be non-negative")
        object.__setattr__(self, "token_ids", ids)

    @property
    def batch(self) -> int:
        return int(self.token_ids.shape[0])

    @property
    def length(self) -> int:
        return int(self.token_ids.shape[1])


@dataclass(frozen=True)
class BackendCaps:
    """What a backend instance can do, fixed at construction."""

    vocab_size: int
    supports_decode_graph: bool
    device_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.vocab_size < 2:
            raise ValidationError("vocab_size must be at least 2")
        if not self.device_ids:
            raise ValidationError("a backend must report at least one device")


def generate_random_prompts(vocab_size: int, batch: int, length: int, seed: int) -> TokenBatch:
    """Uniform random token ids, reproducible for a fixed seed."""
    if vocab_size < 2:
        raise ValidationError(f"vocab_size must be at least 2, got {vocab_size}")
    if batch < 1:
        raise ValidationError(f"batch must be at least 1, got {batch}")
    if length < 1:
        raise ValidationError(f"length must be at least 1, got {length}")
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, vocab_size, size=(batch, length), dtype=np.int64)
    return TokenBatch(ids)


class InferenceBackend(abc.ABC):
    """Abstract driver for one loaded model."""

    #: Optional span recorder; the orchestrator attaches one when tracing.
    recorder: Optional["SpanRecorder"] = None

    @property
    @abc.abstractmethod
    def caps(self) -> BackendCaps:
        ...

    @property
    def model_id(self) -> str:
        return "unknown"

    def describe(self) -> str:
        return type(self).__name__

    def clock(self) -> int:
        """Monotonic nanosecond timestamp in this backend's time domain."""
        return time.perf_counter_ns()

    @abc.abstractmethod
    def prefill(self, prompts: TokenBatch) -> tuple[Any, np.ndarray]:
        """Process the prompts and return (decode state, first token per sequence).

        Returns only after the device work backing the first token is
        finished; callers may add a synchronize() fence regardless.
        """

    @abc.abstractmethod
    def decode_step(self, state: Any) -> np.ndarray:
        """Advance every sequence by one token and return the new token ids."""

    @abc.abstractmethod
    def prepare_decode(self, workload: "Workload") -> None:
        """Set up the decode fast path for the workload's shape.

        Idempotent per shape. Must be called before timed decode loops
        and never before a timed prefill. Raises CapabilityError when
        the backend has no decode fast path.
        """

    def synchronize(self) -> None:
        """Block until all issued device work is complete."""
