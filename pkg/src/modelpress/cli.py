"""Command-line entry point wiring model generation, calibration, pruning,
quantized evaluation, both searches, and report emission.

Every command prints the effective seed; re-running with that seed
reproduces all artifacts bitwise. Perplexity is printed with four
fractional digits while the ledger keeps full precision.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .container_io import FormatError
from .engine import calibrate, load_calibration, perplexity, save_calibration
from .model import (
    ModelConfig,
    generate_toy_model,
    load_checkpoint,
    save_checkpoint,
    tokenize_bytes,
)
from .pruning import METRIC_KINDS, SparsityProfile, apply_profile, measure_sparsity
from .quantization import BandwidthProfile, KVCacheConfig, make_kv_config
from .report import emit_report
from .search import SearchError, search_bandwidth, search_sparsity, write_ledger

__all__ = ["main"]


def _read_corpus(path):
    text = Path(path).read_text(encoding="utf-8")
    return tokenize_bytes(text)


def _parse_bits(value: str, n_layers: int) -> KVCacheConfig:
    parts = [int(p) for p in value.split(",") if p.strip()]
    if len(parts) == 1:
        return KVCacheConfig.uniform(n_layers, parts[0])
    if len(parts) != n_layers:
        raise ValueError(f"--bits lists {len(parts)} widths, model has {n_layers} layers")
    return KVCacheConfig(bits=tuple(parts))


def _kv_config_from_args(args, n_layers: int) -> KVCacheConfig:
    if getattr(args, "kv_bits", None):
        profile = BandwidthProfile.from_json_dict(_load_json(args.kv_bits))
        return make_kv_config(profile, n_layers)
    if getattr(args, "bits", None):
        return _parse_bits(args.bits, n_layers)
    return KVCacheConfig.uniform(n_layers)


def _load_json(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _cmd_gen_model(args) -> int:
    config = ModelConfig(
        n_layers=args.layers,
        d_model=args.d_model,
        n_heads=args.n_heads,
        d_ff=args.d_ff,
        max_seq=args.max_seq,
    )
    ckpt = generate_toy_model(config, args.seed)
    save_checkpoint(ckpt, args.out)
    print(f"wrote checkpoint: {args.out}")
    return 0


def _cmd_calibrate(args) -> int:
    model = load_checkpoint(args.model)
    corpus = _read_corpus(args.corpus)
    ctx = args.ctx if args.ctx else model.config.max_seq
    stats = calibrate(model, corpus, args.samples, ctx=ctx)
    save_calibration(stats, args.out)
    print(f"wrote calibration stats ({stats.n_tokens} tokens): {args.out}")
    return 0


def _cmd_prune(args) -> int:
    model = load_checkpoint(args.model)
    if args.profile:
        profile = SparsityProfile.load(args.profile)
    elif args.sparsity is not None:
        profile = SparsityProfile.uniform(model.config.n_layers, args.sparsity)
    else:
        raise ValueError("prune needs either --sparsity or --profile")
    calib = load_calibration(args.calib) if args.calib else None
    pruned, _ = apply_profile(model, profile, calib, args.metric)
    save_checkpoint(pruned, args.out)
    per_matrix, overall = measure_sparsity(pruned)
    for name, ratio in per_matrix.items():
        print(f"{name}: {ratio:.4f}")
    print(f"overall: {overall:.4f}")
    print(f"wrote pruned checkpoint: {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    corpus = _read_corpus(args.corpus)
    kv = _kv_config_from_args(args, model.config.n_layers)
    ppl = perplexity(model, corpus, kv, args.ctx)
    print(f"ppl: {ppl:.4f}")
    return 0


def _cmd_search_sparsity(args) -> int:
    model = load_checkpoint(args.model)
    corpus = _read_corpus(args.corpus)
    calib = load_calibration(args.calib)
    profile, best_ppl, records = search_sparsity(
        model,
        corpus,
        calib,
        overall=args.overall,
        trials=args.trials,
        seed=args.seed,
        ctx=args.ctx,
        metric=args.metric,
    )
    profile.save(args.out)
    write_ledger(records, args.ledger)
    print(f"best ppl: {best_ppl:.4f}")
    print(f"wrote profile: {args.out}")
    print(f"wrote ledger: {args.ledger}")
    return 0


def _cmd_search_bandwidth(args) -> int:
    model = load_checkpoint(args.model)
    corpus = _read_corpus(args.corpus)
    profile, best_ppl, records = search_bandwidth(
        model, corpus, trials=args.trials, seed=args.seed, ctx=args.ctx
    )
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(profile.to_json_dict(), f)
        f.write("\n")
    write_ledger(records, args.ledger)
    print(f"best ppl: {best_ppl:.4f}")
    print(f"wrote profile: {args.out}")
    print(f"wrote ledger: {args.ledger}")
    return 0


def _cmd_report(args) -> int:
    trials_path, layers_path = emit_report(args.ledger, args.out)
    print(f"wrote report: {trials_path}")
    print(f"wrote report: {layers_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modelpress",
        description="Layer-wise pruning, KV-cache quantization, and budgeted search.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-model", help="generate a random toy checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=8)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--d-ff", type=int, default=64)
    p.add_argument("--max-seq", type=int, default=128)
    p.set_defaults(func=_cmd_gen_model)

    p = sub.add_parser("calibrate", help="collect activation norms from a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--samples", type=int, default=256, help="calibration token count")
    p.add_argument("--ctx", type=int, default=0, help="window length (default: max_seq)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("prune", help="apply a sparsity ratio or profile")
    p.add_argument("--model", required=True)
    p.add_argument("--calib", default=None)
    p.add_argument("--metric", choices=METRIC_KINDS, default="optspa")
    p.add_argument("--sparsity", type=float, default=None, help="uniform ratio for all layers")
    p.add_argument("--profile", default=None, help="sparsity profile JSON from search-sparsity")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_prune)

    p = sub.add_parser("eval", help="perplexity under a KV-cache config")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--ctx", type=int, default=64)
    p.add_argument("--kv-bits", default=None, help="bandwidth profile JSON path")
    p.add_argument("--bits", default=None, help="CSV bit-widths (single value broadcasts)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("search-sparsity", help="TPE search over per-layer ratios")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--metric", choices=METRIC_KINDS, default="optspa")
    p.add_argument("--overall", type=float, required=True)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ctx", type=int, default=64)
    p.add_argument("--out", required=True, help="best-profile JSON path")
    p.add_argument("--ledger", required=True, help="trial ledger path (JSON lines)")
    p.set_defaults(func=_cmd_search_sparsity)

    p = sub.add_parser("search-bandwidth", help="TPE search over per-layer KV bit-widths")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ctx", type=int, default=64)
    p.add_argument("--out", required=True, help="best-profile JSON path")
    p.add_argument("--ledger", required=True, help="trial ledger path (JSON lines)")
    p.set_defaults(func=_cmd_search_bandwidth)

    p = sub.add_parser("report", help="CSV tables from a trial ledger")
    p.add_argument("--ledger", required=True)
    p.add_argument("--out", required=True, help="output stem for <stem>.trials.csv / <stem>.layers.csv")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    print(f"seed: {args.seed}")
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SearchError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
