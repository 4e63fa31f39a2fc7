"""Tree-structured Parzen Estimator search over per-layer compression knobs.

The trial loop suggests an assignment per trial, skips infeasible ones
(re-drawing up to a cap before the slot is forfeited), evaluates feasible
ones through a memo cache, and keeps the argmin. TPE splits the evaluated
history into good/bad fractions and models each dimension with a smoothed
categorical density; candidates are drawn from the good density and ranked
by the log-density ratio.

Hyperparameters (good fraction 0.25, 5 startup trials, 24 candidates,
Laplace smoothing 1.0) are fixed for reproducibility.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .engine import perplexity
from .pruning import SparsityProfile, apply_profile
from .quantization import BandwidthProfile, KVCacheConfig, make_kv_config

FEAS_EPS = 1e-9
MAX_REDRAWS = 100
SPARSITY_GRID_STEP = 0.025

__all__ = [
    "SearchError",
    "SearchSpace",
    "TrialRecord",
    "TpeState",
    "check_feasible",
    "run_search",
    "SearchResult",
    "search_sparsity",
    "search_bandwidth",
    "opposite_profile",
    "write_ledger",
    "read_ledger",
]


class SearchError(RuntimeError):
    """Search cannot produce a result (no budget or nothing feasible)."""


def _grid_value(overall: float, k: int) -> float:
    return round(min(1.0, max(0.0, overall + k * SPARSITY_GRID_STEP)), 6)


@dataclass(frozen=True)
class SearchSpace:
    """Named dimensions, each with an ordered finite choice tuple."""

    dims: tuple

    def __post_init__(self):
        if not self.dims:
            raise ValueError("search space must have at least one dimension")
        for name, choices in self.dims:
            if not choices:
                raise ValueError(f"dimension {name!r} has an empty choice set")

    @classmethod
    def sparsity(cls, n_layers: int, overall: float) -> "SearchSpace":
        """One dimension per layer: overall +/- 5% in 2.5% steps, clipped."""
        choices = []
        for k in (-2, -1, 0, 1, 2):
            value = _grid_value(overall, k)
            if value not in choices:
                choices.append(value)
        return cls(dims=tuple((f"L{l}", tuple(choices)) for l in range(n_layers)))

    @classmethod
    def bandwidth(cls, n_layers: int) -> "SearchSpace":
        return cls(dims=tuple((f"L{l}", (6, 8)) for l in range(n_layers)))

    def values(self, assignment: dict) -> tuple:
        return tuple(assignment[name] for name, _ in self.dims)


@dataclass
class TrialRecord:
    trial: int
    assignment: dict
    feasible: bool
    ppl: float | None
    seconds: float

    def to_json_dict(self) -> dict:
        return {
            "trial": self.trial,
            "assignment": dict(self.assignment),
            "feasible": self.feasible,
            "ppl": self.ppl,
            "seconds": self.seconds,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TrialRecord":
        return cls(
            trial=int(doc["trial"]),
            assignment=dict(doc["assignment"]),
            feasible=bool(doc["feasible"]),
            ppl=None if doc["ppl"] is None else float(doc["ppl"]),
            seconds=float(doc["seconds"]),
        )


@dataclass
class TpeState:
    """Evaluated-trial history plus the sampler that conditions on it."""

    seed: int
    gamma: float = 0.25
    n_startup: int = 5
    n_candidates: int = 24
    alpha: float = 1.0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.n_startup < 1 or self.n_candidates < 1:
            raise ValueError("n_startup and n_candidates must be at least 1")
        self.rng = np.random.default_rng(self.seed)

    def observe(self, trial: TrialRecord) -> None:
        """Record an evaluated trial. Duplicates are retained on purpose:
        repeat observations weight the density estimate."""
        if trial.ppl is None:
            raise ValueError("cannot observe a trial without an objective")
        self.history.append(trial)

    def good_size(self) -> int:
        return max(1, math.ceil(self.gamma * len(self.history)))

    def _densities(self, choices: tuple, good: list, bad: list) -> tuple:
        n_c = len(choices)
        l = np.full(n_c, self.alpha)
        g = np.full(n_c, self.alpha)
        index = {c: i for i, c in enumerate(choices)}
        for assignment in good:
            l[index[assignment]] += 1.0
        for assignment in bad:
            g[index[assignment]] += 1.0
        l /= len(good) + self.alpha * n_c
        g /= len(bad) + self.alpha * n_c
        return l, g

    def suggest(self, space: SearchSpace) -> dict:
        """Next assignment: uniform during startup, density-ratio guided after."""
        if len(self.history) < self.n_startup:
            return {
                name: choices[int(self.rng.integers(len(choices)))]
                for name, choices in space.dims
            }
        objectives = np.array([r.ppl for r in self.history], dtype=np.float64)
        order = np.argsort(objectives, kind="stable")
        good_set = set(int(i) for i in order[: self.good_size()])
        good = [self.history[i] for i in sorted(good_set)]
        bad = [r for i, r in enumerate(self.history) if i not in good_set]

        per_dim = []
        for name, choices in space.dims:
            l, g = self._densities(
                choices,
                [r.assignment[name] for r in good],
                [r.assignment[name] for r in bad],
            )
            per_dim.append((name, choices, np.cumsum(l), np.log(l) - np.log(g)))

        best = None
        best_score = -math.inf
        for _ in range(self.n_candidates):
            candidate = {}
            score = 0.0
            for name, choices, cum_l, log_ratio in per_dim:
                idx = int(np.searchsorted(cum_l, self.rng.random(), side="right"))
                idx = min(idx, len(choices) - 1)
                candidate[name] = choices[idx]
                score += log_ratio[idx]
            if score > best_score:
                best_score = score
                best = candidate
        return best


def check_feasible(values, kind: str | None, overall: float | None = None, weights=None) -> bool:
    """Budget check for one assignment's values (in dimension order).

    Sparsity: the weighted mean ratio must meet or exceed the overall
    budget. Bandwidth: 8-bit and 6-bit layer counts must be equal (an odd
    layer count gets one extra 6-bit layer, favoring compression).
    """
    if kind is None:
        return True
    if kind == "sparsity":
        if overall is None:
            raise ValueError("sparsity feasibility needs the overall budget")
        mean = float(np.average(np.asarray(values, dtype=np.float64), weights=weights))
        return mean >= overall - FEAS_EPS
    if kind == "bandwidth":
        n8 = sum(1 for v in values if v == 8)
        n6 = sum(1 for v in values if v == 6)
        if n8 + n6 != len(values):
            return False
        if len(values) % 2 == 0:
            return n8 == n6
        return n6 == n8 + 1
    raise ValueError(f"unknown space kind {kind!r}")


@dataclass
class SearchResult:
    assignment: dict
    objective: float
    records: list


def run_search(
    space: SearchSpace,
    objective,
    trials: int,
    seed: int,
    kind: str | None = None,
    overall: float | None = None,
    weights=None,
    first: dict | None = None,
) -> SearchResult:
    """Run the trial loop and return the argmin assignment with its ledger.

    Infeasible suggestions are re-drawn up to 100 times; if none succeeds
    the slot is forfeited and recorded as an unevaluated trial. Repeated
    assignments reuse the memoized objective without re-evaluation (every
    evaluated trial, repeat or not, is observed by TPE). ``first`` pins the
    non-TPE opening trial to a fixed assignment; it must be feasible.
    """
    if trials < 1:
        raise SearchError(f"trial budget must be at least 1, got {trials}")
    tpe = TpeState(seed=seed)
    memo = {}
    records = []
    best_key = None
    best_value = math.inf
    best_assignment = None
    for t in range(1, trials + 1):
        started = time.perf_counter()
        assignment = None
        candidate = None
        if t == 1 and first is not None:
            candidate = dict(first)
            if not check_feasible(space.values(candidate), kind, overall, weights):
                raise ValueError("the pinned first assignment is infeasible")
            assignment = candidate
        else:
            for _ in range(MAX_REDRAWS):
                candidate = tpe.suggest(space)
                if check_feasible(space.values(candidate), kind, overall, weights):
                    assignment = candidate
                    break
        if assignment is None:
            records.append(
                TrialRecord(
                    trial=t,
                    assignment=candidate,
                    feasible=False,
                    ppl=None,
                    seconds=time.perf_counter() - started,
                )
            )
            continue
        key = space.values(assignment)
        if key in memo:
            value = memo[key]
        else:
            value = float(objective(assignment))
            memo[key] = value
        record = TrialRecord(
            trial=t,
            assignment=assignment,
            feasible=True,
            ppl=value,
            seconds=time.perf_counter() - started,
        )
        records.append(record)
        tpe.observe(record)
        if value < best_value:
            best_value = value
            best_key = key
            best_assignment = assignment
    if best_assignment is None:
        raise SearchError("no feasible assignment was ever evaluated")
    assert memo[best_key] == best_value
    return SearchResult(assignment=best_assignment, objective=best_value, records=records)


def _sparsity_profile(space: SearchSpace, assignment: dict, overall: float) -> SparsityProfile:
    layers = {l: assignment[name] for l, (name, _) in enumerate(space.dims)}
    return SparsityProfile(overall=overall, layers=layers)


def search_sparsity(
    model,
    corpus,
    calib,
    overall: float,
    trials: int,
    seed: int,
    ctx: int,
    metric: str = "optspa",
):
    """Search per-layer pruning ratios minimizing perplexity at the budget.

    Trial 1 is the uniform allocation at the overall ratio (the non-TPE
    opening trial, and the baseline the search has to beat); TPE takes over
    once the startup phase has history to condition on. Returns
    (best profile, its perplexity, trial records).
    """
    config = model.config
    space = SearchSpace.sparsity(config.n_layers, overall)
    kv = KVCacheConfig.uniform(config.n_layers)

    def objective(assignment):
        profile = _sparsity_profile(space, assignment, overall)
        pruned, _ = apply_profile(model, profile, calib, metric)
        return perplexity(pruned, corpus, kv, ctx)

    center = _grid_value(overall, 0)
    first = {name: center for name, _ in space.dims}
    result = run_search(
        space, objective, trials, seed, kind="sparsity", overall=overall, first=first
    )
    profile = _sparsity_profile(space, result.assignment, overall)
    return profile, result.objective, result.records


def search_bandwidth(model, corpus, trials: int, seed: int, ctx: int):
    """Search the per-layer 6/8-bit KV-cache split minimizing perplexity.

    The model may already be pruned; the constraint keeps half the layers
    at each width. Returns (best profile, its perplexity, trial records).
    """
    config = model.config
    space = SearchSpace.bandwidth(config.n_layers)

    def objective(assignment):
        bits = tuple(assignment[name] for name, _ in space.dims)
        kv = make_kv_config(BandwidthProfile(bits=bits), config.n_layers)
        return perplexity(model, corpus, kv, ctx)

    result = run_search(space, objective, trials, seed, kind="bandwidth")
    profile = BandwidthProfile(bits=tuple(result.assignment[name] for name, _ in space.dims))
    return profile, result.objective, result.records


def opposite_profile(profile: BandwidthProfile) -> BandwidthProfile:
    """Swap 6 and 8 bits per layer (the reverse-allocation baseline)."""
    if any(b not in (6, 8) for b in profile.bits):
        raise ValueError("opposite profile is only defined over 6/8-bit entries")
    return BandwidthProfile(bits=tuple(14 - b for b in profile.bits))


def write_ledger(records, path) -> None:
    """One JSON record per line; assignment keys stay in dimension order."""
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.to_json_dict()) + "\n")


def read_ledger(path) -> list:
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(TrialRecord.from_json_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"malformed ledger line {lineno}: {exc}") from None
    return records
