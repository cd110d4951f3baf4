"""Backend selection and the shared driving contract."""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import BackendError, ElanaError
from .base import BackendCaps, InferenceBackend, TokenBatch, generate_random_prompts
from .simulated import SimulatedBackend, SimulatedBackendConfig

__all__ = [
    "BackendCaps",
    "InferenceBackend",
    "SimulatedBackend",
    "SimulatedBackendConfig",
    "TokenBatch",
    "generate_random_prompts",
    "resolve_backend",
]


def resolve_backend(spec: str) -> InferenceBackend:
    """Build a backend from a selection string.

    "simulated" uses default simulator settings, "simulated:<path>" reads
    a JSON config, and "hub:<model-id-or-path>" loads a real model.
    """
    if spec == "simulated":
        return SimulatedBackend(SimulatedBackendConfig())
    if spec.startswith("simulated:"):
        path = spec.split(":", 1)[1]
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise BackendError(f"cannot read simulated backend config '{path}': {exc}") from exc
        except json.JSONDecodeError as exc:
            raise BackendError(f"simulated backend config '{path}' is not valid JSON: {exc}") from exc
        try:
            return SimulatedBackend(SimulatedBackendConfig.from_document(doc))
        except ElanaError as exc:
            raise BackendError(f"bad simulated backend config '{path}': {exc}") from exc
    if spec.startswith("hub:"):
        from .hub import HubBackend

        return HubBackend(spec.split(":", 1)[1])
    raise BackendError(
        f"unknown backend spec '{spec}' (expected 'simulated[:<config.json>]' or 'hub:<model>')"
    )
