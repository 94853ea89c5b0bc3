"""Encoder and adapter stacks plus checkpoint serialization.

Both networks are plain feed-forward stacks over pooled features: ReLU
between layers, linear at the top. Parameters live in flat lists
[w0, b0, w1, b1, ...] so the optimizer, gradient checks, and serialization
all see the same ordering.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DataError, DimensionError, FormatError, ParseError, StateError
from .linalg import affine_backward, affine_forward, relu_backward, relu_forward

CHECKPOINT_MAGIC = b"EMTN"
CHECKPOINT_VERSION = 1

__all__ = [
    "EncoderConfig",
    "AdapterConfig",
    "Checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "mean_pool",
    "init_encoder",
    "init_adapter",
    "init_stack",
    "mlp_forward",
    "mlp_forward_cached",
    "mlp_backward",
    "encoder_forward",
    "adapter_forward",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class EncoderConfig:
    """Shape of the finetuned encoder: input -> hidden layers -> bottleneck."""

    input_dim: int
    hidden_dims: tuple = (256,)
    bottleneck_dim: int = 128
    seed: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)

    def validate(self) -> None:
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(d < 1 for d in self.hidden_dims):
            raise ConfigError(f"hidden_dims must all be >= 1, got {self.hidden_dims}")
        if self.bottleneck_dim < 2:
            raise ConfigError(f"bottleneck_dim must be >= 2, got {self.bottleneck_dim}")
        if self.bottleneck_dim >= self.input_dim:
            raise ConfigError(
                f"bottleneck_dim {self.bottleneck_dim} must be smaller than input_dim {self.input_dim}"
            )
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")

    @property
    def dims(self) -> tuple:
        return (self.input_dim, *self.hidden_dims, self.bottleneck_dim)


@dataclass
class AdapterConfig:
    """Two affine layers with a ReLU between them, on top of the bottleneck."""

    input_dim: int
    num_classes: int
    hidden_dim: int = 256
    seed: int = 0

    def validate(self) -> None:
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")

    @property
    def dims(self) -> tuple:
        return (self.input_dim, self.hidden_dim, self.num_classes)


def mean_pool(sequence) -> np.ndarray:
    """Average a frames x dim sequence over time into a single row."""
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim != 2:
        raise DimensionError(f"sequence must be 2-D (frames x dim), got shape {seq.shape}")
    if seq.shape[0] < 1:
        raise DataError("cannot pool an empty sequence")
    return seq.mean(axis=0)


def init_stack(dims, seed: int) -> list:
    """Uniform(+-sqrt(6/fan_in)) weights, zero biases, seeded."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def init_encoder(config: EncoderConfig) -> list:
    config.validate()
    return init_stack(config.dims, config.seed)


def init_adapter(config: AdapterConfig) -> list:
    config.validate()
    return init_stack(config.dims, config.seed)


def _layer_count(params) -> int:
    if len(params) < 2 or len(params) % 2 != 0:
        raise DimensionError(f"parameter list must hold (weight, bias) pairs, got {len(params)} entries")
    return len(params) // 2


def mlp_forward(params, x) -> np.ndarray:
    """Forward pass without caches: affine (+ ReLU on all but the last layer)."""
    out, _ = mlp_forward_cached(params, x)
    return out


def mlp_forward_cached(params, x):
    """Forward pass keeping per-layer (input, preactivation) for backprop."""
    layers = _layer_count(params)
    h = np.asarray(x, dtype=np.float64)
    cache = []
    for i in range(layers):
        w, b = params[2 * i], params[2 * i + 1]
        z = affine_forward(h, w, b)
        cache.append((h, z))
        h = relu_forward(z) if i < layers - 1 else z
    return h, cache


def mlp_backward(params, cache, grad_output):
    """Backprop through the stack; returns (param grads, input grad)."""
    layers = _layer_count(params)
    if len(cache) != layers:
        raise StateError(f"cache holds {len(cache)} layers, parameters describe {layers}")
    grads = [None] * len(params)
    g = np.asarray(grad_output, dtype=np.float64)
    for i in reversed(range(layers)):
        h_in, z = cache[i]
        if i < layers - 1:
            g = relu_backward(z, g)
        g, grads[2 * i], grads[2 * i + 1] = affine_backward(h_in, params[2 * i], g)
    return grads, g


def encoder_forward(params, pooled) -> np.ndarray:
    """Embed a batch of pooled feature rows."""
    return mlp_forward(params, pooled)


def adapter_forward(params, embeddings) -> np.ndarray:
    """Class logits for a batch of embeddings."""
    return mlp_forward(params, embeddings)


@dataclass
class Checkpoint:
    """Everything needed to resume or evaluate a run."""

    encoder_config: EncoderConfig
    encoder_params: list
    adapter_config: AdapterConfig | None = None
    adapter_params: list | None = None
    loss_mode: str | None = None
    epoch: int = 0
    seed: int = 0


def _array_payload(params):
    return b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in params)


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    """Write the binary checkpoint; identical checkpoints give identical bytes."""
    if (checkpoint.adapter_config is None) != (checkpoint.adapter_params is None):
        raise StateError("adapter config and adapter params must be saved together")
    meta = {
        "encoder": asdict(checkpoint.encoder_config),
        "encoder_shapes": [list(p.shape) for p in checkpoint.encoder_params],
        "adapter": asdict(checkpoint.adapter_config) if checkpoint.adapter_config else None,
        "adapter_shapes": (
            [list(p.shape) for p in checkpoint.adapter_params] if checkpoint.adapter_params else None
        ),
        "loss_mode": checkpoint.loss_mode,
        "epoch": checkpoint.epoch,
        "seed": checkpoint.seed,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<H", CHECKPOINT_VERSION)
    blob += struct.pack("<I", len(meta_bytes))
    blob += meta_bytes
    blob += _array_payload(checkpoint.encoder_params)
    if checkpoint.adapter_params:
        blob += _array_payload(checkpoint.adapter_params)
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def _take(buf: bytes, offset: int, count: int, what: str):
    if offset + count > len(buf):
        raise ParseError(f"checkpoint truncated while reading {what}", offset=offset)
    return buf[offset : offset + count], offset + count


def _read_arrays(buf, offset, shapes, what):
    params = []
    for shape in shapes:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw, offset = _take(buf, offset, count * 8, f"{what} array {shape}")
        params.append(np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64))
    return params, offset


def load_checkpoint(path) -> Checkpoint:
    """Strict reader for save_checkpoint's format."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, offset = _take(buf, 0, 4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise ParseError(f"bad checkpoint magic {magic!r}", offset=0)
    raw, offset = _take(buf, offset, 2, "format version")
    (version,) = struct.unpack("<H", raw)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    raw, offset = _take(buf, offset, 4, "metadata length")
    (meta_len,) = struct.unpack("<I", raw)
    raw, meta_end = _take(buf, offset, meta_len, "metadata")
    try:
        meta = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"checkpoint metadata is not valid JSON: {exc}", offset=offset) from exc
    offset = meta_end

    encoder_config = EncoderConfig(**meta["encoder"])
    encoder_params, offset = _read_arrays(buf, offset, meta["encoder_shapes"], "encoder")
    adapter_config = AdapterConfig(**meta["adapter"]) if meta.get("adapter") else None
    adapter_params = None
    if meta.get("adapter_shapes"):
        adapter_params, offset = _read_arrays(buf, offset, meta["adapter_shapes"], "adapter")
    if offset != len(buf):
        raise ParseError(f"{len(buf) - offset} unexpected trailing bytes", offset=offset)
    return Checkpoint(
        encoder_config=encoder_config,
        encoder_params=encoder_params,
        adapter_config=adapter_config,
        adapter_params=adapter_params,
        loss_mode=meta.get("loss_mode"),
        epoch=int(meta.get("epoch", 0)),
        seed=int(meta.get("seed", 0)),
    )
