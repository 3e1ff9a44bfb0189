"""Convert an exported tgbl-wiki edge list and its negative-sample pickles into
the events.csv / val_negatives.txt / test_negatives.txt layout read by
``hevlink train``, ``hevlink eval`` and ``hevlink.experiment.load_holdout_dir``.

Inputs:
  edges     CSV with a header whose first three columns are src, dst, t in the
            node-id space the negative sampler uses (export them from the TGB
            dataset object, see the README)
  val_ns    pickle mapping (src, dst, t) -> array of negative destinations
  test_ns   same for the test split

The split here is by event count (70/15/15). Every val/test event must have a
negative-sample entry, otherwise the conversion stops and names the event, which
is how a misaligned split or id space shows up.

    python scripts/tgbl_wiki_convert.py edges.csv val_ns.pkl test_ns.pkl out/
"""

import argparse
import csv
import pickle
import sys
from pathlib import Path

import numpy as np

from hevlink.stream import split_stream


def _load_edges(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        rows = [(int(float(a)), int(float(b)), int(float(c))) for a, b, c, *_ in r]
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def _write_negatives(path, edges, r, table):
    missing = 0
    with open(path, "w") as fh:
        for i in r:
            s, d, t = (int(x) for x in edges[i])
            negs = table.get((s, d, t))
            if negs is None:
                if missing == 0:
                    print(f"no negatives for event {i} {(s, d, t)}", file=sys.stderr)
                missing += 1
                continue
            negs = [int(x) for x in np.asarray(negs).ravel() if int(x) != d]
            fh.write(f"{s},{d},{t},{' '.join(map(str, negs))}\n")
    return missing


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("edges")
    p.add_argument("val_ns")
    p.add_argument("test_ns")
    p.add_argument("out_dir")
    args = p.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    edges = _load_edges(args.edges)
    order = np.argsort(edges[:, 2], kind="stable")
    edges = edges[order]
    with open(out / "events.csv", "w") as fh:
        fh.write("src,dst,t\n")
        for s, d, t in edges:
            fh.write(f"{s},{d},{t}\n")
    split = split_stream(len(edges))
    missing = 0
    for name, pkl, r in (("val", args.val_ns, split.val), ("test", args.test_ns, split.test)):
        with open(pkl, "rb") as fh:
            table = {tuple(int(x) for x in k): v for k, v in pickle.load(fh).items()}
        missing += _write_negatives(out / f"{name}_negatives.txt", edges, r, table)
    print(f"{len(edges)} events; train/val/test {len(split.train)}/{len(split.val)}/{len(split.test)}")
    if missing:
        sys.exit(f"{missing} val/test events have no negative samples; split or ids do not align")


if __name__ == "__main__":
    main()
