"""Run every experiment preset with its default configuration.

    python scripts/run_presets.py --out results --seed 1 --threads 1
"""

import argparse
import json
import time
from pathlib import Path

from hostparasite.experiments import PRESETS, ExperimentConfig, run_preset


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--only", nargs="*", choices=PRESETS, default=list(PRESETS))
    args = ap.parse_args()
    for name in args.only:
        cfg = ExperimentConfig.default(name, seed=args.seed, threads=args.threads, out_dir=args.out / name)
        t0 = time.perf_counter()
        res = run_preset(cfg)
        summary = {k: v for k, v in res.summary.items() if k != "texts"}
        print(f"[{name}] {time.perf_counter() - t0:.1f}s")
        print(json.dumps(summary, indent=2, default=float))


if __name__ == "__main__":
    main()
