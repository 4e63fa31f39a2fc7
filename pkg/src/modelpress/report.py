"""CSV summaries of a search ledger: per-trial results and the per-layer
shape of the winning allocation (ratio-vs-depth or bits-vs-depth)."""

from __future__ import annotations

import csv

from .search import read_ledger

__all__ = ["emit_report"]

TOP_TRIALS = 5


def _layer_order(assignment: dict) -> list:
    def key(name):
        if name.startswith("L") and name[1:].isdigit():
            return (0, int(name[1:]))
        return (1, name)

    return sorted(assignment, key=key)


def emit_report(ledger_path, out_stem) -> tuple[str, str]:
    """Write ``<stem>.trials.csv`` and ``<stem>.layers.csv`` from a ledger.

    The trials table lists every trial with its feasibility and objective.
    The layers table gives, per layer, the best profile's value and the
    mean value across the five best trials. Empty or fully-infeasible
    ledgers produce header-only tables.
    """
    records = read_ledger(ledger_path)
    trials_path = f"{out_stem}.trials.csv"
    layers_path = f"{out_stem}.layers.csv"

    with open(trials_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["trial", "feasible", "ppl"])
        for r in records:
            writer.writerow([r.trial, str(r.feasible).lower(), "" if r.ppl is None else repr(r.ppl)])

    evaluated = [r for r in records if r.feasible and r.ppl is not None]
    with open(layers_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["layer", "best", f"top{TOP_TRIALS}_mean"])
        if evaluated:
            ranked = sorted(evaluated, key=lambda r: r.ppl)
            best = ranked[0]
            top = ranked[:TOP_TRIALS]
            for name in _layer_order(best.assignment):
                index = int(name[1:]) if name.startswith("L") and name[1:].isdigit() else name
                mean = sum(r.assignment[name] for r in top) / len(top)
                writer.writerow([index, repr(best.assignment[name]), repr(mean)])

    return trials_path, layers_path
