"""Synthetic event streams with planted burst structure.

Nodes are split into communities. A fixed number of bursts is active at any
time; each burst belongs to one community, draws a small participant pool from
it and emits ``burst_length`` events among that pool (with probability
``1 - p_intra`` the destination is a uniform random node instead). A fraction
``surprise_knob`` of all events are uniform random pairs that belong to no
burst. Events from concurrent bursts interleave, so consecutive events are
generally unrelated and the structure is only visible through node histories.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .stream import EvalQuery, EventStream, StreamSplit, _remap, split_stream, write_csv, write_eval_queries


@dataclass(frozen=True)
class SynthConfig:
    node_count: int = 200
    community_count: int = 20
    events_total: int = 50_000
    p_intra: float = 0.9
    burst_length: int = 10
    surprise_knob: float = 0.1
    seed: int = 0
    pool_size: int = 4
    concurrent_bursts: int = 4
    max_dt: int = 2
    negatives_k: int = 20

    def __post_init__(self):
        if not 0.0 <= self.p_intra <= 1.0:
            raise ValueError("p_intra must lie in [0, 1]")
        if not 0.0 <= self.surprise_knob <= 1.0:
            raise ValueError("surprise_knob must lie in [0, 1]")
        if self.burst_length < 2:
            raise ValueError("burst_length must be >= 2")
        if self.events_total < self.burst_length:
            raise ValueError("events_total must be >= burst_length")
        if self.node_count < max(2, self.negatives_k + 1):
            raise ValueError("node_count too small for the requested negatives")
        if not 1 <= self.community_count <= self.node_count:
            raise ValueError("community_count must lie in [1, node_count]")
        if self.pool_size < 2:
            raise ValueError("pool_size must be >= 2")


@dataclass
class SynthData:
    config: SynthConfig
    raw_src: np.ndarray
    raw_dst: np.ndarray
    t: np.ndarray
    burst: np.ndarray  # burst id per event, -1 for surprise events
    burst_community: np.ndarray  # community of each burst id
    communities: list[np.ndarray]
    stream: EventStream
    split: StreamSplit
    val_negatives: list[np.ndarray]  # raw ids
    test_negatives: list[np.ndarray]

    def queries(self, which: str) -> list[EvalQuery]:
        r = self.split.val if which == "val" else self.split.test
        negs = self.val_negatives if which == "val" else self.test_negatives
        out = []
        for i, ng in zip(r, negs):
            dense = np.array([self.stream.dense_id(int(x), grow=True) for x in ng], dtype=np.int64)
            out.append(EvalQuery(self.stream[i], dense))
        return out

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"events": out / "events.csv", "val_negatives": out / "val_negatives.txt",
                 "test_negatives": out / "test_negatives.txt", "config": out / "synth_config.json"}
        write_csv(self.stream, paths["events"])
        write_eval_queries(paths["val_negatives"], self.stream, self.split.val, self.val_negatives)
        write_eval_queries(paths["test_negatives"], self.stream, self.split.test, self.test_negatives)
        paths["config"].write_text(json.dumps(asdict(self.config), indent=2, sort_keys=True))
        return paths


def _negatives(rng, node_count: int, dst: int, k: int) -> np.ndarray:
    picks = rng.choice(node_count - 1, size=k, replace=False)
    return np.where(picks >= dst, picks + 1, picks)


def generate(config: SynthConfig = SynthConfig()) -> SynthData:
    rng = np.random.default_rng(config.seed)
    N, E = config.node_count, config.events_total
    communities = np.array_split(rng.permutation(N), config.community_count)
    burst_comm: list[int] = []
    active: list[list] = []  # [burst_id, pool, remaining]

    def new_burst():
        c = int(rng.integers(config.community_count))
        members = communities[c]
        size = min(config.pool_size, len(members))
        pool = rng.choice(members, size=size, replace=False) if size >= 2 else members
        burst_comm.append(c)
        return [len(burst_comm) - 1, pool, config.burst_length]

    for _ in range(config.concurrent_bursts):
        active.append(new_burst())
    src = np.empty(E, dtype=np.int64)
    dst = np.empty(E, dtype=np.int64)
    burst = np.empty(E, dtype=np.int64)
    ts = np.cumsum(rng.integers(0, config.max_dt + 1, size=E))
    surprise = rng.random(E) < config.surprise_knob
    for i in range(E):
        if surprise[i]:
            u, v = rng.choice(N, size=2, replace=False)
            bid = -1
        else:
            slot = int(rng.integers(len(active)))
            b = active[slot]
            bid, pool = b[0], b[1]
            if len(pool) >= 2:
                u, v = rng.choice(pool, size=2, replace=False)
            else:
                u = pool[0]
                v = u
            if rng.random() >= config.p_intra:
                v = int(rng.integers(N - 1))
                v = v + 1 if v >= u else v
            b[2] -= 1
            if b[2] == 0:
                active[slot] = new_burst()
        src[i], dst[i], burst[i] = u, v, bid
    dsrc, ddst, raw_ids = _remap(src, dst)
    stream = EventStream(dsrc, ddst, ts, raw_ids)
    split = split_stream(E)
    val_negs = [_negatives(rng, N, int(dst[i]), config.negatives_k) for i in split.val]
    test_negs = [_negatives(rng, N, int(dst[i]), config.negatives_k) for i in split.test]
    return SynthData(config, src, dst, ts, burst, np.array(burst_comm, dtype=np.int64),
                     communities, stream, split, val_negs, test_negs)
