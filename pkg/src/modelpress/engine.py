"""Inference runtime: KV-cached decoding, perplexity, activation calibration.

Evaluation always routes through the KV cache so quantization measurably
affects the objective. Cached K/V rows are passed through the quantizer at
append time and the dequantized values are what attention reads; since the
quantizer is a pure function this is identical to dequantizing on every
read. Activations are computed in float64 over the float32 weights, which
keeps perplexity bitwise reproducible within one build.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .container_io import read_container, write_container
from .model import PRUNABLE_MODULES, Checkpoint, ModelConfig
from .quantization import PASSTHROUGH_BITS, KVCacheConfig, dequantize, quantize

RMS_EPS = 1e-6

__all__ = [
    "KVCache",
    "forward_step",
    "perplexity",
    "CalibrationStats",
    "calibrate",
    "save_calibration",
    "load_calibration",
    "reconstruction_loss",
]


def _rms_normalize(x: np.ndarray) -> np.ndarray:
    # The epsilon keeps a zero vector mapping to zero instead of NaN.
    return x / np.sqrt((x * x).mean() + RMS_EPS)


def _gelu(x: np.ndarray) -> np.ndarray:
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x**3)))


@dataclass
class _LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    wup: np.ndarray
    wdown: np.ndarray
    g1: np.ndarray
    g2: np.ndarray


@dataclass
class _Prepared:
    embed: np.ndarray
    pos: np.ndarray
    head: np.ndarray
    gf: np.ndarray
    layers: list


def _prepare(model: Checkpoint) -> _Prepared:
    """Float64 working copies of the weights, cached on the checkpoint."""
    if model._prep is not None:
        return model._prep
    t = {k: v.astype(np.float64) for k, v in model.tensors.items()}
    layers = [
        _LayerWeights(
            wq=t[f"L{l}.Wq"],
            wk=t[f"L{l}.Wk"],
            wv=t[f"L{l}.Wv"],
            wo=t[f"L{l}.Wo"],
            wup=t[f"L{l}.Wup"],
            wdown=t[f"L{l}.Wdown"],
            g1=t[f"L{l}.norm1"][0],
            g2=t[f"L{l}.norm2"][0],
        )
        for l in range(model.config.n_layers)
    ]
    prep = _Prepared(embed=t["embed"], pos=t["pos"], head=t["head"], gf=t["norm_f"][0], layers=layers)
    model._prep = prep
    return prep


class KVCache:
    """Per-layer key/value rows for one decoding sequence.

    A cache instance belongs to exactly one in-flight evaluation; it must
    not be shared across concurrent evaluations.
    """

    def __init__(self, config: ModelConfig):
        shape = (config.max_seq, config.d_model)
        self._keys = [np.empty(shape, dtype=np.float64) for _ in range(config.n_layers)]
        self._values = [np.empty(shape, dtype=np.float64) for _ in range(config.n_layers)]
        self.length = 0

    def put(self, layer: int, position: int, k: np.ndarray, v: np.ndarray, bits: int) -> None:
        """Store one token's K and V rows for a layer, quantizing each row."""
        if bits >= PASSTHROUGH_BITS:
            self._keys[layer][position] = k
            self._values[layer][position] = v
        else:
            self._keys[layer][position] = dequantize(quantize(k, bits))
            self._values[layer][position] = dequantize(quantize(v, bits))

    def view(self, layer: int, length: int):
        return self._keys[layer][:length], self._values[layer][:length]


def _step(
    prep: _Prepared,
    config: ModelConfig,
    cache: KVCache,
    token: int,
    position: int,
    bits,
    tap=None,
) -> np.ndarray:
    """One decoder step; returns next-token logits. ``tap(name, x)`` records
    the input vector of each prunable matrix when calibration is active."""
    n_heads = config.n_heads
    head_dim = config.head_dim
    inv_sqrt_hd = 1.0 / math.sqrt(head_dim)
    h = prep.embed[token] + prep.pos[position]
    t = position + 1
    for li, L in enumerate(prep.layers):
        a = _rms_normalize(h) * L.g1
        if tap is not None:
            tap(f"L{li}.Wq", a)
            tap(f"L{li}.Wk", a)
            tap(f"L{li}.Wv", a)
        q = a @ L.wq
        k = a @ L.wk
        v = a @ L.wv
        cache.put(li, position, k, v, bits[li])
        keys, values = cache.view(li, t)
        scores = np.einsum("thd,hd->th", keys.reshape(t, n_heads, head_dim),
                           q.reshape(n_heads, head_dim)) * inv_sqrt_hd
        scores -= scores.max(axis=0)
        weights = np.exp(scores)
        weights /= weights.sum(axis=0)
        attn = np.einsum("th,thd->hd", weights, values.reshape(t, n_heads, head_dim)).reshape(-1)
        if tap is not None:
            tap(f"L{li}.Wo", attn)
        h = h + attn @ L.wo
        b = _rms_normalize(h) * L.g2
        if tap is not None:
            tap(f"L{li}.Wup", b)
        up = _gelu(b @ L.wup)
        if tap is not None:
            tap(f"L{li}.Wdown", up)
        h = h + up @ L.wdown
    final = _rms_normalize(h) * prep.gf
    return final @ prep.head


def forward_step(
    model: Checkpoint,
    cache: KVCache,
    token: int,
    position: int,
    kv_config: KVCacheConfig,
) -> np.ndarray:
    """Feed one token at ``position``, updating the cache; returns logits.

    The cache must already hold positions 0..position-1 and the position
    must be inside the model's sequence limit.
    """
    config = model.config
    if len(kv_config.bits) != config.n_layers:
        raise ValueError(
            f"kv config has {len(kv_config.bits)} entries, model has {config.n_layers} layers"
        )
    if position >= config.max_seq:
        raise ValueError(f"position {position} exceeds max_seq {config.max_seq}")
    if position != cache.length:
        raise ValueError(f"cache holds {cache.length} positions, expected {position}")
    logits = _step(_prepare(model), config, cache, int(token), position, kv_config.bits)
    cache.length = position + 1
    return logits


def _log_softmax_at(logits: np.ndarray, index: int) -> float:
    m = logits.max()
    return float(logits[index] - m - math.log(np.exp(logits - m).sum()))


def _windows(corpus: np.ndarray, ctx: int):
    for start in range(0, len(corpus), ctx):
        window = corpus[start : start + ctx]
        if len(window) >= 2:
            yield window


def perplexity(model: Checkpoint, corpus, kv_config: KVCacheConfig, ctx: int) -> float:
    """exp(mean next-token NLL) over non-overlapping ctx-length windows.

    Within a window tokens are fed sequentially through the KV-cached
    forward pass, so the cache bit-widths affect the score. A final partial
    window is kept when it still contains at least one predicted position.
    """
    corpus = np.asarray(corpus, dtype=np.int64)
    config = model.config
    if corpus.ndim != 1 or len(corpus) < 2:
        raise ValueError("corpus must contain at least 2 tokens")
    if not 2 <= ctx <= config.max_seq:
        raise ValueError(f"ctx must be in [2, max_seq={config.max_seq}], got {ctx}")
    prep = _prepare(model)
    total_nll = 0.0
    n_positions = 0
    for window in _windows(corpus, ctx):
        cache = KVCache(config)
        for p in range(len(window) - 1):
            logits = _step(prep, config, cache, int(window[p]), p, kv_config.bits)
            total_nll -= _log_softmax_at(logits, int(window[p + 1]))
            n_positions += 1
    return float(math.exp(total_nll / n_positions))


@dataclass
class CalibrationStats:
    """Per-input-feature activation L2 norms for every prunable matrix.

    ``norms[name]`` has length equal to that matrix's input dimension; the
    norm of feature j is taken across all processed token positions.
    """

    norms: dict
    n_tokens: int

    def validate(self, config: ModelConfig) -> None:
        for l in range(config.n_layers):
            for m in PRUNABLE_MODULES:
                name = f"L{l}.{m}"
                if name not in self.norms:
                    raise ValueError(f"calibration stats are missing {name!r}")
                expected = config.d_ff if m == "Wdown" else config.d_model
                if len(self.norms[name]) != expected:
                    raise ValueError(
                        f"calibration vector {name!r} has length {len(self.norms[name])}, "
                        f"expected {expected}"
                    )
                if np.any(self.norms[name] < 0):
                    raise ValueError(f"calibration vector {name!r} has negative entries")


def calibrate(model: Checkpoint, corpus, n_tokens: int, ctx: int | None = None) -> CalibrationStats:
    """Run the first ``n_tokens`` of the corpus (unquantized KV) and collect
    the input-feature norms each pruning metric needs.

    Sum-of-squares accumulates across windows; the final norm is its sqrt.
    """
    corpus = np.asarray(corpus, dtype=np.int64)
    if n_tokens < 1:
        raise ValueError("n_tokens must be at least 1")
    if len(corpus) < n_tokens:
        raise ValueError(f"corpus has {len(corpus)} tokens, need {n_tokens}")
    config = model.config
    if ctx is None:
        ctx = config.max_seq
    if not 1 <= ctx <= config.max_seq:
        raise ValueError(f"ctx must be in [1, max_seq={config.max_seq}], got {ctx}")
    prep = _prepare(model)
    bits = (PASSTHROUGH_BITS,) * config.n_layers
    sumsq = {}

    def tap(name, x):
        acc = sumsq.get(name)
        if acc is None:
            sumsq[name] = x * x
        else:
            acc += x * x

    tokens = corpus[:n_tokens]
    for start in range(0, n_tokens, ctx):
        window = tokens[start : start + ctx]
        cache = KVCache(config)
        for p, token in enumerate(window):
            _step(prep, config, cache, int(token), p, bits, tap=tap)
            cache.length = p + 1
    norms = {name: np.sqrt(acc) for name, acc in sumsq.items()}
    stats = CalibrationStats(norms=norms, n_tokens=n_tokens)
    stats.validate(config)
    return stats


def save_calibration(stats: CalibrationStats, path) -> None:
    tensors = {name: vec.reshape(1, -1) for name, vec in stats.norms.items()}
    write_container(path, {"n_tokens": stats.n_tokens}, tensors)


def load_calibration(path) -> CalibrationStats:
    metadata, tensors = read_container(path)
    if "n_tokens" not in metadata:
        raise ValueError("calibration file is missing the n_tokens metadata key")
    norms = {name: arr[0].astype(np.float64) for name, arr in tensors.items()}
    return CalibrationStats(norms=norms, n_tokens=int(metadata["n_tokens"]))


def reconstruction_loss(w, x, mask) -> float:
    """Squared Frobenius norm of W X - (M o W) X for a 0/1 mask M."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if w.ndim != 2 or x.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ValueError(f"shapes do not conform: W {w.shape}, X {x.shape}")
    if mask.shape != w.shape:
        raise ValueError(f"mask shape {mask.shape} does not match W {w.shape}")
    diff = w @ x - (mask * w) @ x
    return float((diff * diff).sum())
