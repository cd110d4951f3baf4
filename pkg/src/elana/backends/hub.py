"""Adapter for causal LMs loaded through the model hub API.

The heavy ML stack is imported lazily so the rest of the profiler works
without it. This path is exercised by opt-in smoke tests only; timing
numbers from it are hardware-bound and never asserted in the core suite.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Any, Optional

import numpy as np

from ..errors import BackendError, CapabilityError, ValidationError
from ..sizing import ParamEntry, ParamInventory
from .base import BackendCaps, InferenceBackend, TokenBatch

if TYPE_CHECKING:
    from ..latency import Workload


class _HubState:
    __slots__ = ("owner", "past_key_values", "last_tokens")

    def __init__(self, owner: "HubBackend", past_key_values: Any, last_tokens: Any) -> None:
        self.owner = owner
        self.past_key_values = past_key_values
        self.last_tokens = last_tokens


class HubBackend(InferenceBackend):
    def __init__(self, model_path: str, device: Optional[str] = None) -> None:
        try:
            import torch
            from transformers import AutoConfig, AutoModelForCausalLM
        except ImportError as exc:
            raise BackendError(
                "hub backend needs torch and transformers installed "
                "(pip install 'elana[hub]')"
            ) from exc

        self._torch = torch
        if device is None:
            device = "cuda" if torch.cuda.is_available() else "cpu"
        self._device = device
        try:
            config = AutoConfig.from_pretrained(model_path)
            dtype = torch.float16 if device.startswith("cuda") else torch.float32
            self._model = AutoModelForCausalLM.from_pretrained(model_path, torch_dtype=dtype)
        except Exception as exc:
            raise BackendError(f"failed to load model '{model_path}': {exc}") from exc
        self._model.to(device)
        self._model.eval()
        self._model_path = model_path

        if device.startswith("cuda"):
            index = torch.cuda.current_device()
            devices = (f"cuda:{index}",)
        else:
            devices = ("cpu",)
        self._caps = BackendCaps(
            vocab_size=int(config.vocab_size),
            supports_decode_graph=False,
            device_ids=devices,
        )

    @property
    def caps(self) -> BackendCaps:
        return self._caps

    @property
    def model_id(self) -> str:
        return self._model_path

    def describe(self) -> str:
        return f"hub({self._model_path}, {self._device})"

    def param_inventory(self) -> ParamInventory:
        """Enumerate parameters and buffers of the loaded model."""
        entries = []
        for name, tensor in self._model.named_parameters():
            entries.append(ParamEntry(name, tensor.numel(), tensor.element_size(), False))
        for name, tensor in self._model.named_buffers():
            entries.append(ParamEntry(name, tensor.numel(), tensor.element_size(), True))
        return ParamInventory(entries=tuple(entries))

    def _to_device(self, ids: np.ndarray):
        return self._torch.as_tensor(ids, dtype=self._torch.long, device=self._device)

    def prefill(self, prompts: TokenBatch) -> tuple[Any, np.ndarray]:
        if prompts.length < 1:
            raise ValidationError("prompts must contain at least one token")
        if int(prompts.token_ids.max()) >= self._caps.vocab_size:
            raise ValidationError("prompt contains out-of-vocabulary token id")
        torch = self._torch
        with torch.no_grad():
            out = self._model(input_ids=self._to_device(prompts.token_ids), use_cache=True)
            next_tokens = out.logits[:, -1, :].argmax(dim=-1)
        self.synchronize()
        state = _HubState(self, out.past_key_values, next_tokens.unsqueeze(-1))
        return state, next_tokens.cpu().numpy()

    def decode_step(self, state: Any) -> np.ndarray:
        if not isinstance(state, _HubState) or state.owner is not self:
            raise ValidationError("decode state does not belong to this backend instance")
        torch = self._torch
        with torch.no_grad():
            out = self._model(
                input_ids=state.last_tokens,
                past_key_values=state.past_key_values,
                use_cache=True,
            )
            next_tokens = out.logits[:, -1, :].argmax(dim=-1)
        self.synchronize()
        state.past_key_values = out.past_key_values
        state.last_tokens = next_tokens.unsqueeze(-1)
        return next_tokens.cpu().numpy()

    def prepare_decode(self, workload: "Workload") -> None:
        # Graph capture belongs to specialized serving runtimes; the plain
        # hub path reports the capability gap and the harness falls back.
        raise CapabilityError("hub backend has no decode fast path")

    def synchronize(self) -> None:
        if self._device.startswith("cuda"):
            self._torch.cuda.synchronize()
