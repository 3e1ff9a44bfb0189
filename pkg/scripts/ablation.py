"""Enhanced (12-column) versus basic (4-column) correlation rows over several seeds.

    python scripts/ablation.py --seeds 0 1 2
"""

import argparse
import json
import os

import numpy as np

from hevlink.experiment import run_holdout
from hevlink.synth import SynthConfig, generate
from hevlink.trainer import TrainConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--n-segment", type=int, default=8)
    p.add_argument("--chunk-size", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", help="write per-seed results as JSON")
    args = p.parse_args()

    rows = []
    for seed in args.seeds:
        data = generate(SynthConfig(seed=seed))
        for mode in ("enhanced-12d", "basic-4d"):
            cfg = TrainConfig(seed=seed, mode=mode, epochs=args.epochs, n_segment=args.n_segment,
                              chunk_size=args.chunk_size, lr=args.lr, threads=args.threads,
                              n_segment_eval=args.threads)
            run = run_holdout(data, cfg)
            rows.append({"seed": seed, "mode": mode, "test_mrr": run.test_mrr,
                         "best_epoch": run.fit.best_epoch})
            print(f"seed {seed} {mode:13s} test MRR {run.test_mrr:.4f}", flush=True)
    enh = np.mean([r["test_mrr"] for r in rows if r["mode"] == "enhanced-12d"])
    bas = np.mean([r["test_mrr"] for r in rows if r["mode"] == "basic-4d"])
    print(f"mean enhanced {enh:.4f} basic {bas:.4f} gap {enh - bas:+.4f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"runs": rows, "gap": enh - bas}, fh, indent=2)


if __name__ == "__main__":
    main()
