"""Toy causal decoder model: configuration, named weights, generation, I/O.

The architecture is fixed: pre-norm blocks with RMS-norm, causal multi-head
attention, GELU MLP, learned absolute positions, byte-level vocab of 256,
and an untied head. The six matrices Wq/Wk/Wv/Wo/Wup/Wdown of each layer
are the prunable set; embeddings, positions, norm gains, and the head are
never pruned.

Weight layout convention: every stored matrix maps inputs to outputs as
``y = x @ W``, i.e. shape (d_in, d_out).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .container_io import read_container, write_container

PRUNABLE_MODULES = ("Wq", "Wk", "Wv", "Wo", "Wup", "Wdown")

CONFIG_KEYS = ("n_layers", "d_model", "n_heads", "d_ff", "vocab", "max_seq")

__all__ = [
    "PRUNABLE_MODULES",
    "ModelConfig",
    "Checkpoint",
    "generate_toy_model",
    "prunable_names",
    "save_checkpoint",
    "load_checkpoint",
    "tokenize_bytes",
    "detokenize_bytes",
]


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    d_model: int
    n_heads: int
    d_ff: int
    vocab: int = 256
    max_seq: int = 128

    def __post_init__(self):
        for name in CONFIG_KEYS:
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"config field {name} must be a positive integer, got {value!r}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"n_heads ({self.n_heads}) must divide d_model ({self.d_model})")
        if self.vocab != 256:
            raise ValueError(f"vocab is fixed at 256 (byte-level), got {self.vocab}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_metadata(self) -> dict:
        return {k: getattr(self, k) for k in CONFIG_KEYS}

    @classmethod
    def from_metadata(cls, metadata: dict) -> "ModelConfig":
        try:
            kwargs = {k: int(metadata[k]) for k in CONFIG_KEYS}
        except KeyError as missing:
            raise ValueError(f"checkpoint metadata is missing {missing}") from None
        return cls(**kwargs)


def prunable_names(config: ModelConfig) -> list[str]:
    """All prunable tensor names, in layer-major order."""
    return [f"L{l}.{m}" for l in range(config.n_layers) for m in PRUNABLE_MODULES]


def _expected_shapes(config: ModelConfig) -> dict:
    d, f = config.d_model, config.d_ff
    shapes = {
        "embed": (config.vocab, d),
        "pos": (config.max_seq, d),
    }
    for l in range(config.n_layers):
        shapes[f"L{l}.Wq"] = (d, d)
        shapes[f"L{l}.Wk"] = (d, d)
        shapes[f"L{l}.Wv"] = (d, d)
        shapes[f"L{l}.Wo"] = (d, d)
        shapes[f"L{l}.Wup"] = (d, f)
        shapes[f"L{l}.Wdown"] = (f, d)
        shapes[f"L{l}.norm1"] = (1, d)
        shapes[f"L{l}.norm2"] = (1, d)
    shapes["norm_f"] = (1, d)
    shapes["head"] = (d, config.vocab)
    return shapes


@dataclass
class Checkpoint:
    """Named-tensor container for one model; treated as immutable once built."""

    config: ModelConfig
    tensors: dict
    _prep: object = field(default=None, repr=False, compare=False)

    def validate(self) -> None:
        expected = _expected_shapes(self.config)
        for name, shape in expected.items():
            if name not in self.tensors:
                raise ValueError(f"checkpoint is missing tensor {name!r}")
            got = self.tensors[name].shape
            if tuple(got) != shape:
                raise ValueError(f"tensor {name!r} has shape {got}, expected {shape}")
        extra = set(self.tensors) - set(expected)
        if extra:
            raise ValueError(f"checkpoint has unexpected tensors: {sorted(extra)}")

    def with_tensors(self, replacements: dict) -> "Checkpoint":
        """New checkpoint sharing all tensors except the replaced ones."""
        tensors = dict(self.tensors)
        tensors.update(replacements)
        return Checkpoint(config=self.config, tensors=tensors)


def _depth_scale(layer: int, n_layers: int) -> float:
    # Layers get heterogeneous init scale with depth so pruning sensitivity
    # differs across the stack; a single layer gets the base scale.
    if n_layers == 1:
        return 1.0
    return 1.0 + 0.5 * math.sin(math.pi * layer / (n_layers - 1))


def generate_toy_model(config: ModelConfig, seed: int) -> Checkpoint:
    """Deterministic random checkpoint for the given config and seed.

    Weights are normal with std 1/sqrt(fan_in), multiplied per layer by the
    depth-varying scale; norm gains start at one. The draw order is fixed,
    so identical (config, seed) pairs produce bitwise-identical checkpoints.
    """
    rng = np.random.default_rng(seed)
    d, f = config.d_model, config.d_ff

    def draw(shape, std):
        return (rng.standard_normal(shape) * std).astype(np.float32)

    tensors = {
        "embed": draw((config.vocab, d), 1.0),
        "pos": draw((config.max_seq, d), 0.5),
    }
    for l in range(config.n_layers):
        scale = _depth_scale(l, config.n_layers)
        # Larger query/key scale sharpens attention, so cache quantization
        # and pruning have a measurable effect on an untrained model.
        tensors[f"L{l}.Wq"] = draw((d, d), 2.5 * scale / math.sqrt(d))
        tensors[f"L{l}.Wk"] = draw((d, d), 2.5 * scale / math.sqrt(d))
        tensors[f"L{l}.Wv"] = draw((d, d), scale / math.sqrt(d))
        tensors[f"L{l}.Wo"] = draw((d, d), scale / math.sqrt(d))
        tensors[f"L{l}.Wup"] = draw((d, f), scale / math.sqrt(d))
        tensors[f"L{l}.Wdown"] = draw((f, d), scale / math.sqrt(f))
        tensors[f"L{l}.norm1"] = np.ones((1, d), dtype=np.float32)
        tensors[f"L{l}.norm2"] = np.ones((1, d), dtype=np.float32)
    tensors["norm_f"] = np.ones((1, d), dtype=np.float32)
    tensors["head"] = draw((d, config.vocab), 1.0 / math.sqrt(d))

    ckpt = Checkpoint(config=config, tensors=tensors)
    ckpt.validate()
    return ckpt


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    ckpt.validate()
    ordered = {name: ckpt.tensors[name] for name in _expected_shapes(ckpt.config)}
    write_container(path, ckpt.config.to_metadata(), ordered)


def load_checkpoint(path) -> Checkpoint:
    metadata, tensors = read_container(path)
    config = ModelConfig.from_metadata(metadata)
    ckpt = Checkpoint(config=config, tensors=tensors)
    ckpt.validate()
    return ckpt


def tokenize_bytes(text: str) -> np.ndarray:
    """Byte-level tokens of the UTF-8 encoding; lossless, vocab 256."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.int64)


def detokenize_bytes(tokens) -> str:
    return bytes(int(t) for t in tokens).decode("utf-8")
