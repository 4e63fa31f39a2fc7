"""Importance scoring, mask selection, and layer-wise sparsity profiles.

Metric functions follow the math convention: the weight matrix is
(outputs x inputs), so column j is an input feature and ``xnorm[j]`` is the
calibration L2 norm of that feature's activations. Checkpoint tensors are
stored (inputs x outputs) and are transposed at the apply_profile boundary.

Mask selection ranks the whole matrix at once (not per output row), so the
achieved sparsity of every matrix equals its profile ratio exactly; per-row
ranking remains available as a flag for ablation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .engine import CalibrationStats
from .model import PRUNABLE_MODULES, Checkpoint, ModelConfig
from .tensor_ops import stable_argsort

METRIC_KINDS = ("magnitude", "wanda", "optspa")

# Absolute slack for floor(ratio * numel) and for budget comparisons; covers
# float64 representation error of grid ratios without disturbing any
# boundary more than 1e-9 wide.
_EPS = 1e-9

__all__ = [
    "METRIC_KINDS",
    "metric_magnitude",
    "metric_wanda",
    "metric_optspa",
    "select_mask",
    "SparsityProfile",
    "apply_profile",
    "measure_sparsity",
]


def metric_magnitude(w) -> np.ndarray:
    """S_ij = |W_ij|."""
    return np.abs(np.asarray(w, dtype=np.float64))


def metric_wanda(w, xnorm) -> np.ndarray:
    """S_ij = |W_ij| * xnorm_j."""
    w = np.asarray(w, dtype=np.float64)
    xnorm = np.asarray(xnorm, dtype=np.float64)
    if xnorm.ndim != 1 or len(xnorm) != w.shape[1]:
        raise ValueError(f"xnorm has length {xnorm.shape}, expected {w.shape[1]}")
    return np.abs(w) * xnorm[None, :]


def metric_optspa(w, xnorm) -> np.ndarray:
    """Row/column-normalized log score weighted by activation importance:

        S_ij = log(1 + |W_ij|/||W_i|| + |W_ij|/||W_j||) * sqrt(xnorm_j)

    with ||W_i|| and ||W_j|| the L2 norms of row i and column j. A zero row
    or column norm contributes 0 for its ratio term (every numerator in it
    is necessarily zero). Scores are invariant under W -> c*W for c > 0, and
    scale by sqrt(c) under xnorm -> c*xnorm, so masks ignore both scalings.
    """
    w = np.asarray(w, dtype=np.float64)
    xnorm = np.asarray(xnorm, dtype=np.float64)
    if xnorm.ndim != 1 or len(xnorm) != w.shape[1]:
        raise ValueError(f"xnorm has length {xnorm.shape}, expected {w.shape[1]}")
    a = np.abs(w)
    row_norms = np.sqrt((a * a).sum(axis=1))
    col_norms = np.sqrt((a * a).sum(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        row_term = np.where(row_norms[:, None] > 0, a / row_norms[:, None], 0.0)
        col_term = np.where(col_norms[None, :] > 0, a / col_norms[None, :], 0.0)
    return np.log1p(row_term + col_term) * np.sqrt(xnorm)[None, :]


def select_mask(scores, ratio: float, per_row: bool = False) -> np.ndarray:
    """0/1 mask zeroing exactly floor(ratio * numel) lowest-scored entries.

    Ties break by row-major index through the stable sort, so masks are
    deterministic and nested: a larger ratio never un-zeroes an entry that
    a smaller ratio removed. ``per_row=True`` ranks each output row
    independently instead (floor(ratio * cols) zeros per row).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError(f"scores must be 2-D, got shape {scores.shape}")
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must be in [0, 1], got {ratio}")
    if per_row:
        mask = np.ones_like(scores, dtype=np.float32)
        k = int(math.floor(ratio * scores.shape[1] + _EPS))
        for i in range(scores.shape[0]):
            order = stable_argsort(scores[i], "asc")
            mask[i, order[:k]] = 0.0
        return mask
    flat = scores.ravel()
    k = int(math.floor(ratio * flat.size + _EPS))
    order = stable_argsort(flat, "asc")
    mask = np.ones(flat.size, dtype=np.float32)
    mask[order[:k]] = 0.0
    return mask.reshape(scores.shape)


def _module_numel(config: ModelConfig, module: str) -> int:
    if module in ("Wup", "Wdown"):
        return config.d_model * config.d_ff
    return config.d_model * config.d_model


@dataclass
class SparsityProfile:
    """Per-layer pruning ratios under a global budget.

    ``layers[i]`` is either a single ratio applied to all six matrices of
    layer i, or a {module name -> ratio} map covering all six. Feasibility
    means the element-count-weighted mean ratio meets or exceeds the
    overall budget.
    """

    overall: float
    layers: dict

    @classmethod
    def uniform(cls, n_layers: int, ratio: float) -> "SparsityProfile":
        return cls(overall=ratio, layers={l: ratio for l in range(n_layers)})

    def ratio_for(self, layer: int, module: str) -> float:
        if layer not in self.layers:
            raise ValueError(f"profile has no entry for layer {layer}")
        entry = self.layers[layer]
        if isinstance(entry, dict):
            if module not in entry:
                raise ValueError(f"profile layer {layer} has no ratio for module {module!r}")
            ratio = entry[module]
        else:
            ratio = entry
        if not 0.0 <= ratio <= 1.0:
            raise ValueError(f"ratio for layer {layer} module {module} is {ratio}, not in [0, 1]")
        return float(ratio)

    def mean_ratio(self, config: ModelConfig) -> float:
        """Element-count-weighted mean over every prunable matrix."""
        total = 0.0
        weight = 0.0
        for l in range(config.n_layers):
            for m in PRUNABLE_MODULES:
                n = _module_numel(config, m)
                total += self.ratio_for(l, m) * n
                weight += n
        return total / weight

    def is_feasible(self, config: ModelConfig) -> bool:
        return self.mean_ratio(config) >= self.overall - _EPS

    def to_json_dict(self) -> dict:
        layers = []
        for idx in sorted(self.layers):
            entry = self.layers[idx]
            if isinstance(entry, dict):
                layers.append({"index": idx, "modules": {m: entry[m] for m in PRUNABLE_MODULES}})
            else:
                layers.append({"index": idx, "ratio": entry})
        return {"overall": self.overall, "layers": layers}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SparsityProfile":
        if "overall" not in doc or "layers" not in doc:
            raise ValueError("profile document needs 'overall' and 'layers'")
        layers = {}
        for entry in doc["layers"]:
            try:
                idx = int(entry["index"])
                if "modules" in entry:
                    layers[idx] = {m: float(r) for m, r in entry["modules"].items()}
                else:
                    layers[idx] = float(entry["ratio"])
            except (KeyError, TypeError) as exc:
                raise ValueError(f"malformed profile layer entry {entry!r}: {exc}") from None
        return cls(overall=float(doc["overall"]), layers=layers)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json_dict(), f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "SparsityProfile":
        with open(path, encoding="utf-8") as f:
            return cls.from_json_dict(json.load(f))


def apply_profile(
    model: Checkpoint,
    profile: SparsityProfile,
    calib: CalibrationStats | None,
    metric: str,
    per_row: bool = False,
):
    """Prune every layer's matrices at the profile's ratios.

    Returns (pruned checkpoint, masks). Masks are keyed by tensor name in
    the stored (inputs x outputs) orientation. The input checkpoint is left
    untouched; unpruned tensors are shared with it.
    """
    if metric not in METRIC_KINDS:
        raise ValueError(f"unknown metric {metric!r}, expected one of {METRIC_KINDS}")
    if metric != "magnitude" and calib is None:
        raise ValueError(f"metric {metric!r} requires calibration stats")
    config = model.config
    replacements = {}
    masks = {}
    for l in range(config.n_layers):
        for m in PRUNABLE_MODULES:
            name = f"L{l}.{m}"
            ratio = profile.ratio_for(l, m)
            stored = model.tensors[name]
            w = stored.T  # (outputs x inputs)
            if metric == "magnitude":
                scores = metric_magnitude(w)
            elif metric == "wanda":
                scores = metric_wanda(w, calib.norms[name])
            else:
                scores = metric_optspa(w, calib.norms[name])
            mask = select_mask(scores, ratio, per_row=per_row).T
            masks[name] = mask
            replacements[name] = (stored * mask).astype(np.float32)
    return model.with_tensors(replacements), masks


def measure_sparsity(source) -> tuple[dict, float]:
    """Zero fraction per prunable matrix plus the element-weighted overall.

    ``source`` is a Checkpoint (zeros counted in the weights) or a mask dict
    as returned by apply_profile.
    """
    if isinstance(source, Checkpoint):
        items = {
            f"L{l}.{m}": source.tensors[f"L{l}.{m}"]
            for l in range(source.config.n_layers)
            for m in PRUNABLE_MODULES
        }
    else:
        items = source
    per_matrix = {}
    zeros = 0
    total = 0
    for name, arr in items.items():
        z = int(np.count_nonzero(arr == 0))
        per_matrix[name] = z / arr.size
        zeros += z
        total += arr.size
    return per_matrix, zeros / total
