"""Run the reference-scenario few-shot sweeps with and without the learned
boundary (modes ii and iii) and emit reports + plot data.

Usage:
    python scripts/run_reference_sweep.py [--out runs/reference] [--jobs N]
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from oodlab.config import load_config
from oodlab.harness import detect_break_point, emit_report, run_fewshot_sweep

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "reference.json"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/reference")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()

    base = load_config(CONFIG)
    for mode in ("ii", "iii"):
        config = base.with_updates(mode=mode)
        out = Path(args.out) / f"mode_{mode}"
        t0 = time.perf_counter()
        sweep = run_fewshot_sweep(config, out_dir=out, jobs=args.jobs)
        wall = time.perf_counter() - t0
        emit_report(sweep, out, wall_seconds=wall)
        print(f"mode ({mode}) sweep in {wall:.1f}s", file=sys.stderr)
        for name in config.tests:
            curve = sweep.curve(name)
            values = [v for _, v in curve]
            print(
                f"  {name}: "
                + " ".join(f"{c}:{v:.3f}" for c, v in curve)
                + f"  spread={max(values) - min(values):.3f}",
                file=sys.stderr,
            )
        print(f"  break points: {detect_break_point(sweep, config.break_floor)}", file=sys.stderr)
        if sweep.failures:
            print(f"  failures: {sweep.failures}", file=sys.stderr)
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
