"""Run all four ablation modes on the reference scenario with one shared seed.

Modes: (i) outlier dataset only, (ii) few-shot outliers only, (iii) few-shot
outliers + generated boundary, (iv) all three.

Usage:
    python scripts/run_reference_ablation.py [--out runs/ablation]
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from oodlab.config import load_config
from oodlab.harness import emit_report, run_ablation

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "reference.json"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/ablation")
    parser.add_argument("--modes", default="i,ii,iii,iv")
    args = parser.parse_args()

    config = load_config(CONFIG)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    t0 = time.perf_counter()
    results = run_ablation(config, modes=modes, out_dir=args.out)
    emit_report(results, args.out, wall_seconds=time.perf_counter() - t0)
    failed = False
    for mode, rec in results.items():
        if isinstance(rec, dict):
            print(f"mode ({mode}): FAILED {rec['error']}", file=sys.stderr)
            failed = True
            continue
        cells = " ".join(
            f"{name}: auroc={rep.auroc:.3f} aauroc={rep.aauroc:.3f} gauroc={rep.gauroc:.3f}"
            for name, rep in rec.reports.items()
        )
        print(f"mode ({mode}): {cells}", file=sys.stderr)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
