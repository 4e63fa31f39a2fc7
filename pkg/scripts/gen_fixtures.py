#!/usr/bin/env python3
"""Regenerate the binary checkpoint fixtures under tests/fixtures/.

The test suite is anchored on these shipped files, not on the RNG: golden
values in the tests were computed against these exact bytes. Re-running
this script must be a no-op unless the generator itself changed.
"""

from pathlib import Path

from modelpress import ModelConfig, generate_toy_model, save_checkpoint

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

SPECS = {
    # 8-layer fixture: the main search/evaluation subject.
    "model8.opsc": (ModelConfig(n_layers=8, d_model=32, n_heads=4, d_ff=64, max_seq=128), 23),
    # 3-layer fixture: small enough to enumerate its sparsity grid exhaustively.
    "model3.opsc": (ModelConfig(n_layers=3, d_model=16, n_heads=4, d_ff=32, max_seq=128), 5),
}


def main():
    FIXTURES.mkdir(parents=True, exist_ok=True)
    for name, (config, seed) in SPECS.items():
        path = FIXTURES / name
        save_checkpoint(generate_toy_model(config, seed), path)
        print(f"wrote {path} ({path.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
