"""Per-epoch training wall time against the number of segments.

    python scripts/speedup_bench.py --segments 1 2 4 8 --threads 8
"""

import argparse
import os
import time
from concurrent.futures import ThreadPoolExecutor

from hevlink.synth import SynthConfig, generate
from hevlink.trainer import TrainConfig, Trainer, train_epoch


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--segments", type=int, nargs="+", default=[1, 2, 4, 8])
    p.add_argument("--chunk-size", type=int, default=50)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    data = generate(SynthConfig(seed=args.seed))
    base = None
    print(f"{os.cpu_count()} hardware threads, pool of {args.threads}")
    print("n_segment  steps  seconds  ratio")
    for n in args.segments:
        cfg = TrainConfig(n_segment=n, chunk_size=args.chunk_size, epochs=1, threads=args.threads)
        tr = Trainer(data.stream, data.split, cfg)
        with ThreadPoolExecutor(args.threads) as pool:
            t0 = time.perf_counter()
            _, steps = train_epoch(tr.new_segments(), tr.model, cfg, 1, tr.node_count, 0, pool)
            dt = time.perf_counter() - t0
        base = base or dt
        print(f"{n:9d}  {steps:5d}  {dt:7.1f}  {dt / base:5.3f}", flush=True)


if __name__ == "__main__":
    main()
