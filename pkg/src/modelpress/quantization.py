"""Uniform asymmetric quantization and per-layer KV-cache bit-widths.

A block is quantized against its own min/max: codes are
round((a - min) / step) with step = (max - min) / (2^b - 1), rounding
half away from zero, codes clamped to [0, 2^b - 1]. A constant block
(max == min) gets step 1 and all-zero codes, making it lossless.

In the KV cache each appended K row and V row is one block. Bit-width 16
means passthrough: the raw values are cached, no quantizer involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PASSTHROUGH_BITS = 16
SEARCH_BITS = (6, 8)

__all__ = [
    "PASSTHROUGH_BITS",
    "SEARCH_BITS",
    "QuantizedBlock",
    "quantize",
    "dequantize",
    "BandwidthProfile",
    "KVCacheConfig",
    "make_kv_config",
]


@dataclass(frozen=True)
class QuantizedBlock:
    codes: np.ndarray  # unsigned integers < 2^bits, same shape as the input
    bits: int
    vmin: float
    step: float


def quantize(a, bits: int) -> QuantizedBlock:
    """Quantize a finite, nonempty value block at the given bit-width."""
    if not 2 <= bits <= 16:
        raise ValueError(f"bit-width must be in [2, 16], got {bits}")
    arr = np.asarray(a, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot quantize an empty block")
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot quantize a block with NaN or Inf")
    vmin = float(arr.min())
    vmax = float(arr.max())
    levels = (1 << bits) - 1
    step = (vmax - vmin) / levels
    # step can underflow to zero for subnormal ranges; treat as constant
    if step == 0.0:
        return QuantizedBlock(
            codes=np.zeros(arr.shape, dtype=np.uint16), bits=bits, vmin=vmin, step=1.0
        )
    # Scaled values are nonnegative, so half-away-from-zero is floor(x + 0.5).
    codes = np.floor((arr - vmin) / step + 0.5)
    codes = np.clip(codes, 0, levels).astype(np.uint16)
    return QuantizedBlock(codes=codes, bits=bits, vmin=vmin, step=step)


def dequantize(q: QuantizedBlock) -> np.ndarray:
    """Reconstruct the block: vmin + code * step (float64)."""
    return q.vmin + q.codes.astype(np.float64) * q.step


@dataclass(frozen=True)
class BandwidthProfile:
    """Per-layer KV-cache bit-widths; the search draws from {6, 8}."""

    bits: tuple

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))
        bad = [b for b in self.bits if b not in (6, 8, PASSTHROUGH_BITS)]
        if bad:
            raise ValueError(f"bandwidth profile entries must be 6, 8, or 16, got {bad}")

    def satisfies_cardinality(self) -> bool:
        """Search constraint: equal 8/6 counts (odd layer count favors 6)."""
        n8 = sum(1 for b in self.bits if b == 8)
        n6 = sum(1 for b in self.bits if b == 6)
        if n8 + n6 != len(self.bits):
            return False
        if len(self.bits) % 2 == 0:
            return n8 == n6
        return n6 == n8 + 1

    def to_json_dict(self) -> dict:
        return {"bits": list(self.bits)}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "BandwidthProfile":
        if "bits" not in doc or not isinstance(doc["bits"], list):
            raise ValueError("bandwidth profile document must have a 'bits' list")
        return cls(bits=tuple(doc["bits"]))


@dataclass(frozen=True)
class KVCacheConfig:
    """Per-layer bit-widths consumed by the forward pass (16 = passthrough).

    The search space is {6, 8}; other widths down to 2 are accepted here so
    the CLI can demonstrate aggressive settings outside the search.
    """

    bits: tuple

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))
        bad = [b for b in self.bits if not 2 <= b <= 16]
        if bad:
            raise ValueError(f"KV-cache bit-widths must be in [2, 16], got {bad}")

    @classmethod
    def uniform(cls, n_layers: int, bits: int = PASSTHROUGH_BITS) -> "KVCacheConfig":
        return cls(bits=(bits,) * n_layers)


def make_kv_config(profile: BandwidthProfile, n_layers: int) -> KVCacheConfig:
    """Turn a bandwidth profile into the engine's per-layer cache config."""
    if len(profile.bits) != n_layers:
        raise ValueError(
            f"bandwidth profile has {len(profile.bits)} entries, model has {n_layers} layers"
        )
    return KVCacheConfig(bits=profile.bits)
