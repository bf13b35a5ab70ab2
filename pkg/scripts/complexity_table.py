#!/usr/bin/env python3
"""Complexity table: params, MACs, and measured FPS for the three variants.

Uses the default toy configuration (3x64x48 input, widths 8/16/32/64); the
ds < plain < residual ordering holds at any equal-width setting.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from mtdrive import models as md


def main() -> int:
    print(f"{'variant':>10} {'params':>10} {'MACs':>12} {'FPS':>8}  config")
    for variant in md.VARIANTS:
        cfg = md.ModelConfig(variant=variant, dropout_rate=0.0)
        model = md.build_model(cfg, seed=0)
        rep = md.count_complexity(model)
        print(f"{variant:>10} {rep.params:>10,} {rep.macs:>12,} {rep.fps:>8.1f}  {rep.config_hash}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
