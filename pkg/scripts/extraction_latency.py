"""Median single-query encoding latency as the stream grows.

    python scripts/extraction_latency.py --sizes 1000 100000 1000000
"""

import argparse
import statistics
import time

import numpy as np

from hevlink.adjacency import AdjacencyTable
from hevlink.correlation import encode_sequence, extract_hyper_event
from hevlink.stream import Event


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[1_000, 100_000, 1_000_000])
    p.add_argument("--n-neighbor", type=int, default=10)
    p.add_argument("--n-latest", type=int, default=10)
    p.add_argument("--queries", type=int, default=3000)
    args = p.parse_args()

    rng = np.random.default_rng(0)
    print("events     nodes   extract_us  encode_us")
    for n in args.sizes:
        nodes = max(10, n // 10)
        tab = AdjacencyTable(args.n_neighbor, nodes)
        tab.apply(rng.integers(0, nodes, n), rng.integers(0, nodes, n), np.arange(n))
        encode_sequence(extract_hyper_event(Event(0, 1, n), tab, args.n_latest), tab)  # compile
        ext, enc = [], []
        for a, b in rng.integers(0, nodes, (args.queries, 2)).tolist():
            t0 = time.perf_counter()
            c = extract_hyper_event(Event(a, b, n), tab, args.n_latest)
            t1 = time.perf_counter()
            encode_sequence(c, tab)
            t2 = time.perf_counter()
            ext.append(t1 - t0)
            enc.append(t2 - t1)
        print(f"{n:9d}  {nodes:7d}  {statistics.median(ext) * 1e6:10.1f}  "
              f"{statistics.median(enc) * 1e6:9.1f}")


if __name__ == "__main__":
    main()
