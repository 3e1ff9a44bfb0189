"""Streaming filtered-MRR evaluation.

Each query scores its true destination and its predefined negatives against
the table state holding every earlier event; afterwards the true event (never
a negative) is inserted. Ties are split by averaging the optimistic and
pessimistic ranks.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adjacency import AdjacencyTable, precompute_snapshots
from .correlation import mode_dim, stream_featurize_kernel, truncation_width
from .discriminator import Discriminator
from .errors import StaleEvent
from .stream import PAD, EvalQuery, EventStream

# sequences scored per forward call
_BLOCK_SEQUENCES = 4096


@dataclass(frozen=True)
class RankResult:
    optimistic: int
    pessimistic: int

    @property
    def rank(self) -> float:
        return 0.5 * (self.optimistic + self.pessimistic) + 1.0

    @property
    def reciprocal(self) -> float:
        return 1.0 / self.rank


def rank_from_scores(pos_score: float, neg_scores) -> RankResult:
    neg = np.asarray(neg_scores, dtype=np.float64)
    return RankResult(int((neg > pos_score).sum()), int((neg >= pos_score).sum()))


@dataclass
class EvalResult:
    mrr: float
    queries: list[EvalQuery]
    pos_score: np.ndarray
    optimistic: np.ndarray
    pessimistic: np.ndarray

    @property
    def rank(self) -> np.ndarray:
        return 0.5 * (self.optimistic + self.pessimistic) + 1.0

    @property
    def reciprocal(self) -> np.ndarray:
        return 1.0 / self.rank

    def write_dump(self, path, raw_ids: np.ndarray | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["src", "dst", "t", "pos_score", "optimistic", "pessimistic", "rank", "reciprocal"])
            for q, ps, o, p, r, rr in zip(self.queries, self.pos_score, self.optimistic,
                                          self.pessimistic, self.rank, self.reciprocal):
                s, d, t = q.positive
                if raw_ids is not None:
                    s, d = int(raw_ids[s]), int(raw_ids[d])
                w.writerow([s, d, t, f"{ps:.9f}", int(o), int(p), f"{r:.1f}", f"{rr:.9f}"])

    def summary(self, **extra) -> dict:
        return {"mrr": round(self.mrr, 4), "mrr_exact": self.mrr, "queries": len(self.queries), **extra}

    def write_summary(self, path, **extra) -> None:
        Path(path).write_text(json.dumps(self.summary(**extra), indent=2, sort_keys=True))


def _candidates(queries: list[EvalQuery]) -> np.ndarray:
    k = 1 + max(len(q.negatives) for q in queries)
    cands = np.full((len(queries), k), PAD, dtype=np.int64)
    for i, q in enumerate(queries):
        cands[i, 0] = q.positive[1]
        cands[i, 1:1 + len(q.negatives)] = q.negatives
    return cands


def _run_queries(queries: list[EvalQuery], table: AdjacencyTable, model: Discriminator,
                 n_latest: int, mode: str):
    """Sequential streaming pass over ``queries``; mutates ``table``."""
    n = len(queries)
    pos = np.zeros(n)
    opt = np.zeros(n, dtype=np.int64)
    pes = np.zeros(n, dtype=np.int64)
    if n == 0:
        return pos, opt, pes
    cands_all = _candidates(queries)
    table.ensure_nodes(int(max(cands_all.max(), max(q.positive[0] for q in queries))) + 1)
    dim = mode_dim(mode)
    lmax = max(2 * n_latest, 1)
    w = truncation_width(table.capacity)
    block = max(1, _BLOCK_SEQUENCES // cands_all.shape[1])
    for b0 in range(0, n, block):
        qb = queries[b0:b0 + block]
        cands = cands_all[b0:b0 + block]
        qs = np.array([q.positive[0] for q in qb], dtype=np.int64)
        qd = np.array([q.positive[1] for q in qb], dtype=np.int64)
        qt = np.array([q.positive[2] for q in qb], dtype=np.int64)
        out = np.zeros(cands.shape + (lmax, dim))
        lens = np.zeros(cands.shape, dtype=np.int64)
        cursor, stale = stream_featurize_kernel(
            table.src, table.dst, table.t, table.idx, table.partner, table.length, table.cursor,
            qs, qd, qt, cands, n_latest, w, dim == 12, out, lens)
        table.cursor = int(cursor)
        if stale >= 0:
            raise StaleEvent(f"query {b0 + stale} is older than the table state")
        valid = cands >= 0
        scores = np.full(cands.shape, np.nan)
        scores[valid] = model.predict(out[valid], lens[valid])
        for i in range(len(qb)):
            negs = scores[i, 1:][valid[i, 1:]]
            r = rank_from_scores(scores[i, 0], negs)
            pos[b0 + i] = scores[i, 0]
            opt[b0 + i] = r.optimistic
            pes[b0 + i] = r.pessimistic
    return pos, opt, pes


def score_query(query: EvalQuery, table: AdjacencyTable, model: Discriminator, config) -> RankResult:
    """Rank one query against a frozen copy of ``table`` (the table is not modified)."""
    _, opt, pes = _run_queries([query], table.copy(), model, config.n_latest, config.mode)
    return RankResult(int(opt[0]), int(pes[0]))


def _queries_stream(queries: list[EvalQuery], raw_ids) -> EventStream:
    return EventStream(np.array([q.positive[0] for q in queries], dtype=np.int64),
                       np.array([q.positive[1] for q in queries], dtype=np.int64),
                       np.array([q.positive[2] for q in queries], dtype=np.int64),
                       raw_ids)


def evaluate_split(queries: list[EvalQuery], table: AdjacencyTable, model: Discriminator,
                   config, n_segment_eval: int = 1, threads: int = 1) -> EvalResult:
    """MRR over ``queries`` in stream order; ``table`` ends holding every positive.

    With ``n_segment_eval > 1`` the queries are split into contiguous segments,
    each replayed from a precomputed snapshot; per-query results are identical
    to the sequential pass.
    """
    n_latest, mode = config.n_latest, config.mode
    if not queries:
        return EvalResult(float("nan"), [], np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64))
    top = max(int(_candidates(queries).max()), max(max(q.positive[:2]) for q in queries)) + 1
    table.ensure_nodes(top)
    if n_segment_eval <= 1:
        pos, opt, pes = _run_queries(queries, table, model, n_latest, mode)
    else:
        qstream = _queries_stream(queries, np.arange(table.node_count))
        snaps = precompute_snapshots(qstream, n_segment_eval, start=table)
        bounds = [s.boundary_index - table.cursor for s in snaps] + [len(queries)]
        tables = [s.table.copy() for s in snaps]

        def run(s):
            return _run_queries(queries[bounds[s]:bounds[s + 1]], tables[s], model, n_latest, mode)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                parts = list(ex.map(run, range(n_segment_eval)))
        else:
            parts = [run(s) for s in range(n_segment_eval)]
        pos = np.concatenate([p[0] for p in parts])
        opt = np.concatenate([p[1] for p in parts])
        pes = np.concatenate([p[2] for p in parts])
        final = tables[-1]
        for f in AdjacencyTable._FIELDS + ("length",):
            setattr(table, f, getattr(final, f))
        table.cursor = final.cursor
    rec = 1.0 / (0.5 * (opt + pes) + 1.0)
    return EvalResult(float(rec.mean()), list(queries), pos, opt, pes)
