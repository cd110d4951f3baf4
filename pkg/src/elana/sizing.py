"""Analytic model and cache memory sizing.

Nothing here allocates tensors. Sizes are computed from architecture
metadata and kept as exact integer byte counts; unit conversion and
rounding happen only when a number is rendered for people.

Per attention layer, the KV cache holds keys and values for every cached
token, so its footprint is

    2 * n_kv_heads * head_dim * dtype_bytes * batch * seq_len

summed over the attention layers. Recurrent-state (SSM) layers keep a
fixed per-sequence state instead, so their footprint scales with batch
but not with sequence length.

Two unit conventions are supported for rendering:

* SI (default): 1 GB = 1000**3 bytes, the storage-style definition.
* binary: 1 GiB = 1024**3 bytes.

Rendering rounds half away from zero at the requested decimal count.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Optional, Sequence

from .errors import SchemaError, ValidationError

_ALLOWED_DTYPE_BYTES = (1, 2, 4, 8)

# Parameter dtype strings as they appear in published model configs.
_DTYPE_NAME_BYTES = {
    "float64": 8,
    "double": 8,
    "float32": 4,
    "float": 4,
    "float16": 2,
    "half": 2,
    "bfloat16": 2,
    "int8": 1,
    "uint8": 1,
    "float8_e4m3fn": 1,
    "float8_e5m2": 1,
}


class LayerKind(enum.Enum):
    ATTENTION = "attention"
    SSM = "ssm"


class UnitMode(enum.Enum):
    SI = "SI"
    BINARY = "BINARY"


@dataclass(frozen=True)
class ByteSize:
    """An exact byte count; formatting is a separate concern."""

    bytes: int

    def __post_init__(self) -> None:
        if not isinstance(self.bytes, int) or isinstance(self.bytes, bool):
            raise ValidationError("byte count must be an integer")
        if self.bytes < 0:
            raise ValidationError("byte count must be non-negative")


@dataclass(frozen=True)
class LayerDesc:
    """One layer of the cache-relevant layer stack."""

    kind: LayerKind
    n_kv_heads: Optional[int] = None
    head_dim: Optional[int] = None
    state_bytes_per_sequence: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind is LayerKind.ATTENTION:
            if self.n_kv_heads is None or self.head_dim is None:
                raise ValidationError("attention layer needs n_kv_heads and head_dim")
            if self.n_kv_heads <= 0 or self.head_dim <= 0:
                raise ValidationError("attention head geometry must be positive")
            if self.state_bytes_per_sequence is not None:
                raise ValidationError("attention layer must not carry ssm state")
        elif self.kind is LayerKind.SSM:
            if self.state_bytes_per_sequence is None:
                raise ValidationError("ssm layer needs state_bytes_per_sequence")
            if self.state_bytes_per_sequence <= 0:
                raise ValidationError("ssm state size must be positive")
            if self.n_kv_heads is not None or self.head_dim is not None:
                raise ValidationError("ssm layer must not carry attention geometry")

    @classmethod
    def attention(cls, n_kv_heads: int, head_dim: int) -> "LayerDesc":
        return cls(kind=LayerKind.ATTENTION, n_kv_heads=n_kv_heads, head_dim=head_dim)

    @classmethod
    def ssm(cls, state_bytes_per_sequence: int) -> "LayerDesc":
        return cls(kind=LayerKind.SSM, state_bytes_per_sequence=state_bytes_per_sequence)


@dataclass(frozen=True)
class ArchConfig:
    """Architecture metadata needed for cache sizing."""

    model_id: str
    vocab_size: int
    layers: tuple[LayerDesc, ...]
    default_dtype_bytes: int

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValidationError("architecture needs at least one layer")
        if self.vocab_size <= 0:
            raise ValidationError("vocab_size must be positive")
        if self.default_dtype_bytes not in _ALLOWED_DTYPE_BYTES:
            raise ValidationError(
                f"dtype_bytes must be one of {_ALLOWED_DTYPE_BYTES}, got {self.default_dtype_bytes}"
            )


@dataclass(frozen=True)
class ParamEntry:
    name: str
    element_count: int
    dtype_bytes: int
    is_buffer: bool = False

    def __post_init__(self) -> None:
        if self.element_count < 0:
            raise ValidationError(f"negative element count for '{self.name}'")
        if self.dtype_bytes <= 0:
            raise ValidationError(f"dtype_bytes must be positive for '{self.name}'")

    @property
    def nbytes(self) -> int:
        return self.element_count * self.dtype_bytes


@dataclass(frozen=True)
class ParamInventory:
    """Named weight and buffer entries, as enumerated from a checkpoint."""

    entries: tuple[ParamEntry, ...]

    def __post_init__(self) -> None:
        names = [e.name for e in self.entries]
        if len(names) != len(set(names)):
            raise ValidationError("parameter names must be unique")


@dataclass(frozen=True)
class CacheBreakdown:
    attention_bytes: int
    ssm_bytes: int
    total_bytes: int

    def __post_init__(self) -> None:
        if self.attention_bytes < 0 or self.ssm_bytes < 0:
            raise ValidationError("cache byte counts must be non-negative")
        if self.total_bytes != self.attention_bytes + self.ssm_bytes:
            raise ValidationError("cache total must equal attention + ssm")


def _first_key(doc: Mapping, *names: str):
    for name in names:
        if name in doc and doc[name] is not None:
            return doc[name]
    return None


def _dtype_bytes_from(doc: Mapping) -> int:
    raw = _first_key(doc, "dtype_bytes")
    if raw is not None:
        return int(raw)
    name = _first_key(doc, "torch_dtype", "dtype")
    if name is None:
        raise SchemaError("architecture config is missing 'dtype_bytes' (or 'torch_dtype')")
    key = str(name).lower()
    if key not in _DTYPE_NAME_BYTES:
        raise ValidationError(f"unrecognized dtype name '{name}'")
    return _DTYPE_NAME_BYTES[key]


_KIND_ALIASES = {
    "attention": LayerKind.ATTENTION,
    "attn": LayerKind.ATTENTION,
    "ssm": LayerKind.SSM,
    "mamba": LayerKind.SSM,
    "recurrent": LayerKind.SSM,
}


def parse_arch(doc: Mapping) -> ArchConfig:
    """Build an ArchConfig from a JSON-compatible config document.

    Accepts both the shorthand keys used throughout this project
    (n_layers, n_kv_heads, head_dim, dtype_bytes, vocab) and the common
    model-hub config names (num_hidden_layers, num_key_value_heads,
    vocab_size, torch_dtype, with head_dim derived from hidden_size and
    num_attention_heads when absent). Hybrid stacks declare an optional
    ``pattern`` list of layer kinds, cycled over the layer count, with
    ``ssm_state_bytes`` giving the per-sequence state of each SSM layer.
    """
    if not isinstance(doc, Mapping):
        raise SchemaError("architecture config must be a key-value document")

    n_layers = _first_key(doc, "n_layers", "num_hidden_layers", "num_layers")
    if n_layers is None:
        raise SchemaError("architecture config is missing 'n_layers'")
    n_layers = int(n_layers)
    if n_layers <= 0:
        raise ValidationError(f"n_layers must be positive, got {n_layers}")

    vocab = _first_key(doc, "vocab", "vocab_size")
    if vocab is None:
        raise SchemaError("architecture config is missing 'vocab'")
    vocab = int(vocab)
    if vocab <= 0:
        raise ValidationError(f"vocab must be positive, got {vocab}")

    dtype_bytes = _dtype_bytes_from(doc)

    raw_pattern = doc.get("pattern")
    if raw_pattern is None:
        kinds = [LayerKind.ATTENTION] * n_layers
    else:
        if not isinstance(raw_pattern, Sequence) or isinstance(raw_pattern, (str, bytes)):
            raise SchemaError("'pattern' must be a list of layer kinds")
        if not raw_pattern:
            raise ValidationError("'pattern' must not be empty")
        if len(raw_pattern) > n_layers:
            raise ValidationError("'pattern' is longer than n_layers")
        parsed = []
        for item in raw_pattern:
            key = str(item).lower()
            if key not in _KIND_ALIASES:
                raise ValidationError(f"unknown layer kind '{item}' in pattern")
            parsed.append(_KIND_ALIASES[key])
        kinds = [parsed[i % len(parsed)] for i in range(n_layers)]

    layers = []
    attn_template = None
    ssm_state = None
    for kind in kinds:
        if kind is LayerKind.ATTENTION:
            if attn_template is None:
                n_kv = _first_key(doc, "n_kv_heads", "num_key_value_heads", "num_kv_heads")
                if n_kv is None:
                    raise SchemaError("architecture config is missing 'n_kv_heads'")
                head_dim = _first_key(doc, "head_dim")
                if head_dim is None:
                    hidden = _first_key(doc, "hidden_size")
                    heads = _first_key(doc, "num_attention_heads", "n_heads")
                    if hidden is None or heads is None:
                        raise SchemaError("architecture config is missing 'head_dim'")
                    if int(heads) <= 0 or int(hidden) % int(heads) != 0:
                        raise ValidationError("cannot derive head_dim from hidden_size")
                    head_dim = int(hidden) // int(heads)
                n_kv = int(n_kv)
                head_dim = int(head_dim)
                if n_kv <= 0 or head_dim <= 0:
                    raise ValidationError("attention head geometry must be positive")
                attn_template = LayerDesc.attention(n_kv, head_dim)
            layers.append(attn_template)
        else:
            if ssm_state is None:
                raw_state = _first_key(doc, "ssm_state_bytes", "state_bytes_per_sequence")
                if raw_state is None:
                    raise SchemaError("architecture config is missing 'ssm_state_bytes'")
                ssm_state = int(raw_state)
                if ssm_state <= 0:
                    raise ValidationError(f"ssm_state_bytes must be positive, got {ssm_state}")
            layers.append(LayerDesc.ssm(ssm_state))

    model_id = _first_key(doc, "model_id", "_name_or_path", "name") or "unnamed-arch"
    return ArchConfig(
        model_id=str(model_id),
        vocab_size=vocab,
        layers=tuple(layers),
        default_dtype_bytes=dtype_bytes,
    )


def parse_param_inventory(doc: Mapping) -> Optional[ParamInventory]:
    """Read the optional 'param_inventory' block of an architecture config."""
    raw = doc.get("param_inventory")
    if raw is None:
        return None
    if not isinstance(raw, Sequence) or isinstance(raw, (str, bytes)):
        raise SchemaError("'param_inventory' must be a list of entries")
    entries = []
    for i, item in enumerate(raw):
        if not isinstance(item, Mapping):
            raise SchemaError(f"param_inventory[{i}] must be a key-value entry")
        if "name" not in item:
            raise SchemaError(f"param_inventory[{i}] is missing 'name'")
        if "element_count" not in item:
            raise SchemaError(f"param_inventory[{i}] is missing 'element_count'")
        if "dtype_bytes" not in item:
            raise SchemaError(f"param_inventory[{i}] is missing 'dtype_bytes'")
        entries.append(
            ParamEntry(
                name=str(item["name"]),
                element_count=int(item["element_count"]),
                dtype_bytes=int(item["dtype_bytes"]),
                is_buffer=bool(item.get("is_buffer", False)),
            )
        )
    return ParamInventory(entries=tuple(entries))


def param_and_buffer_size(inv: ParamInventory) -> tuple[ByteSize, ByteSize]:
    """Sum the inventory into (parameter bytes, buffer bytes)."""
    param_total = 0
    buffer_total = 0
    for entry in inv.entries:
        if entry.is_buffer:
            buffer_total += entry.nbytes
        else:
            param_total += entry.nbytes
    return ByteSize(param_total), ByteSize(buffer_total)


def cache_size(
    arch: ArchConfig,
    batch: int,
    seq_len: int,
    dtype_bytes_override: Optional[int] = None,
) -> CacheBreakdown:
    """Cache footprint for a (batch, seq_len) workload, exact bytes.

    seq_len counts every cached position (prompt plus generated so far).
    A zero seq_len is legal and zeroes the attention term only; SSM state
    exists as soon as a sequence does.
    """
    if batch < 1:
        raise ValidationError(f"batch must be at least 1, got {batch}")
    if seq_len < 0:
        raise ValidationError(f"seq_len must be non-negative, got {seq_len}")
    dtype_bytes = arch.default_dtype_bytes
    if dtype_bytes_override is not None:
        if dtype_bytes_override not in _ALLOWED_DTYPE_BYTES:
            raise ValidationError(
                f"dtype_bytes must be one of {_ALLOWED_DTYPE_BYTES}, got {dtype_bytes_override}"
            )
        dtype_bytes = dtype_bytes_override

    attention = 0
    ssm = 0
    for layer in arch.layers:
        if layer.kind is LayerKind.ATTENTION:
            # keys and values, hence the factor of 2
            attention += 2 * layer.n_kv_heads * layer.head_dim * dtype_bytes * batch * seq_len
        else:
            ssm += layer.state_bytes_per_sequence * batch
    return CacheBreakdown(attention_bytes=attention, ssm_bytes=ssm, total_bytes=attention + ssm)


def format_bytes(size: ByteSize | int, unit_mode: UnitMode = UnitMode.SI, decimals: int = 2) -> str:
    """Render a byte count as GB (SI) or GiB (binary).

    Rounds half away from zero, so 16.065e9 bytes renders as "16.07 GB".
    """
    if decimals < 0:
        raise ValidationError("decimals must be non-negative")
    count = size.bytes if isinstance(size, ByteSize) else ByteSize(int(size)).bytes
    if unit_mode is UnitMode.SI:
        divisor, suffix = 1000**3, "GB"
    else:
        divisor, suffix = 1024**3, "GiB"
    value = Decimal(count) / Decimal(divisor)
    quantum = Decimal(1).scaleb(-decimals)
    return f"{value.quantize(quantum, rounding=ROUND_HALF_UP)} {suffix}"
