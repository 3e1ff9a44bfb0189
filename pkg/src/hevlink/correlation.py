"""Overlap distances between nodes and the per-query correlation sequence.

For a query ``(u*, v*, t*)`` the history is the union of the ``n_latest``
newest events stored for ``u*`` and for ``v*``, oldest first. Each historical
event ``(u, v)`` becomes one row::

    [d0(u*,u), d0(u*,v), d0(v*,u), d0(v*,v),
     d1(u*,u), d1(u*,v), d1(v*,u), d1(v*,v),
     d2(u*,u), d2(u*,v), d2(v*,u), d2(v*,v)]

``basic-4d`` mode keeps only the four ``d1`` columns. All distances are
computed on multisets of partner ids (duplicates count) and are 0 whenever a
list involved is empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .adjacency import AdjacencyTable, insert_kernel
from .stream import Event

MODES = {"enhanced-12d": 12, "basic-4d": 4}
FEATURE_NAMES = {
    "enhanced-12d": [f"{k}_{a}_{b}" for k in ("d0", "d1", "d2")
                     for a in ("uq", "vq") for b in ("u", "v")],
    "basic-4d": [f"d1_{a}_{b}" for a in ("uq", "vq") for b in ("u", "v")],
}


def mode_dim(mode: str) -> int:
    try:
        return MODES[mode]
    except KeyError:
        raise ValueError(f"unknown correlation mode {mode!r}; expected one of {list(MODES)}") from None


def truncation_width(capacity: int) -> int:
    """Neighbours kept per node for the 2-hop expansion: floor(sqrt(capacity))."""
    return max(1, math.isqrt(capacity))


@numba.njit(cache=True, nogil=True)
def _d0(part, length, a, b):
    lb = length[b]
    if lb == 0:
        return 0.0
    c = 0
    for j in range(lb):
        if part[b, j] == a:
            c += 1
    return c / lb


@numba.njit(cache=True, nogil=True)
def _d1(part, length, a, b):
    la = length[a]
    lb = length[b]
    if la == 0 or lb == 0:
        return 0.0
    c = 0
    for i in range(la):
        x = part[a, i]
        for j in range(lb):
            if part[b, j] == x:
                c += 1
    return c / (la * lb)


@numba.njit(cache=True, nogil=True)
def _expand2(part, length, a, w, buf):
    n = 0
    na = min(w, length[a])
    for i in range(na):
        y = part[a, i]
        ny = min(w, length[y])
        for j in range(ny):
            buf[n] = part[y, j]
            n += 1
    return n


@numba.njit(cache=True, nogil=True)
def _overlap(xa, na, xb, nb):
    if na == 0 or nb == 0:
        return 0.0
    c = 0
    for i in range(na):
        x = xa[i]
        for j in range(nb):
            if xb[j] == x:
                c += 1
    return c / (na * nb)


@numba.njit(cache=True, nogil=True)
def _d2(part, length, a, b, w):
    ba = np.empty(w * w, dtype=np.int64)
    bb = np.empty(w * w, dtype=np.int64)
    na = _expand2(part, length, a, w, ba)
    nb = _expand2(part, length, b, w, bb)
    return _overlap(ba, na, bb, nb)


@numba.njit(cache=True, nogil=True)
def _extract(src_a, dst_a, t_a, idx_a, length, us, vs, n_latest, hs, hd, ht, hi):
    """Fill ``hs, hd, hi`` with the deduplicated history of ``(us, vs)``; oldest first."""
    n = 0
    for side in range(2):
        node = us if side == 0 else vs
        m = min(n_latest, length[node])
        for j in range(m):
            ix = idx_a[node, j]
            dup = False
            for k in range(n):
                if hi[k] == ix:
                    dup = True
                    break
            if dup:
                continue
            # insertion sort, ascending stream index
            p = n
            while p > 0 and hi[p - 1] > ix:
                hs[p] = hs[p - 1]
                hd[p] = hd[p - 1]
                ht[p] = ht[p - 1]
                hi[p] = hi[p - 1]
                p -= 1
            hs[p] = src_a[node, j]
            hd[p] = dst_a[node, j]
            ht[p] = t_a[node, j]
            hi[p] = ix
            n += 1
    return n


@numba.njit(cache=True, nogil=True)
def _encode_rows(part, length, us, vs, hs, hd, n, w, enhanced, out):
    """Write ``n`` correlation rows into ``out``; returns rows written (>= 1)."""
    if n == 0:
        for c in range(out.shape[1]):
            out[0, c] = 0.0
        return 1
    cap_w = w * w
    eq_u = np.empty(cap_w, dtype=np.int64)
    eq_v = np.empty(cap_w, dtype=np.int64)
    ex_u = np.empty(cap_w, dtype=np.int64)
    ex_v = np.empty(cap_w, dtype=np.int64)
    nqu = 0
    nqv = 0
    if enhanced:
        nqu = _expand2(part, length, us, w, eq_u)
        nqv = _expand2(part, length, vs, w, eq_v)
    for r in range(n):
        u = hs[r]
        v = hd[r]
        if enhanced:
            out[r, 0] = _d0(part, length, us, u)
            out[r, 1] = _d0(part, length, us, v)
            out[r, 2] = _d0(part, length, vs, u)
            out[r, 3] = _d0(part, length, vs, v)
            o = 4
        else:
            o = 0
        out[r, o + 0] = _d1(part, length, us, u)
        out[r, o + 1] = _d1(part, length, us, v)
        out[r, o + 2] = _d1(part, length, vs, u)
        out[r, o + 3] = _d1(part, length, vs, v)
        if enhanced:
            nu = _expand2(part, length, u, w, ex_u)
            nv = _expand2(part, length, v, w, ex_v)
            out[r, 8] = _overlap(eq_u, nqu, ex_u, nu)
            out[r, 9] = _overlap(eq_u, nqu, ex_v, nv)
            out[r, 10] = _overlap(eq_v, nqv, ex_u, nu)
            out[r, 11] = _overlap(eq_v, nqv, ex_v, nv)
    return n


@numba.njit(cache=True, nogil=True)
def featurize_kernel(src_a, dst_a, t_a, idx_a, part_a, length, qs, qd, n_latest, w, enhanced,
                     out, lens, hist_idx):
    """Encode every query ``(qs[i], qd[i])`` against one frozen table state."""
    hs = np.empty(2 * n_latest, dtype=np.int64)
    hd = np.empty(2 * n_latest, dtype=np.int64)
    ht = np.empty(2 * n_latest, dtype=np.int64)
    hi = np.empty(2 * n_latest, dtype=np.int64)
    for i in range(qs.shape[0]):
        n = _extract(src_a, dst_a, t_a, idx_a, length, qs[i], qd[i], n_latest, hs, hd, ht, hi)
        for r in range(n):
            hist_idx[i, r] = hi[r]
        for r in range(n, hist_idx.shape[1]):
            hist_idx[i, r] = -1
        lens[i] = _encode_rows(part_a, length, qs[i], qd[i], hs, hd, n, w, enhanced, out[i])


@numba.njit(cache=True, nogil=True)
def stream_featurize_kernel(src_a, dst_a, t_a, idx_a, part_a, length, cursor,
                            qs, qd, qt, cands, n_latest, w, enhanced, out, lens):
    """Streaming pass: query ``i`` scores ``cands[i, :]`` (``-1`` = unused slot)
    against the current state, then its true event is inserted.

    ``out`` has shape ``(Q, K, Lmax, D)``. Returns ``(next_cursor, stale_position)``.
    """
    hs = np.empty(2 * n_latest, dtype=np.int64)
    hd = np.empty(2 * n_latest, dtype=np.int64)
    ht = np.empty(2 * n_latest, dtype=np.int64)
    hi = np.empty(2 * n_latest, dtype=np.int64)
    for i in range(qs.shape[0]):
        if qs[i] == -1:
            for k in range(cands.shape[1]):
                lens[i, k] = 0
            continue
        for k in range(cands.shape[1]):
            c = cands[i, k]
            if c < 0:
                lens[i, k] = 0
                continue
            n = _extract(src_a, dst_a, t_a, idx_a, length, qs[i], c, n_latest, hs, hd, ht, hi)
            lens[i, k] = _encode_rows(part_a, length, qs[i], c, hs, hd, n, w, enhanced, out[i, k])
        rc = insert_kernel(src_a, dst_a, t_a, idx_a, part_a, length,
                           qs[i], qd[i], qt[i], cursor)
        if rc != 0:
            return cursor, i
        cursor += 1
    return cursor, -1


def _table_lengths(table: AdjacencyTable, *nodes: int) -> None:
    top = max(nodes) + 1
    if top > table.node_count:
        table.ensure_nodes(top)


def d0(a: int, b: int, table: AdjacencyTable) -> float:
    """Share of ``b``'s stored partners equal to ``a`` (asymmetric)."""
    _table_lengths(table, a, b)
    return float(_d0(table.partner, table.length, a, b))


def d1(a: int, b: int, table: AdjacencyTable) -> float:
    _table_lengths(table, a, b)
    return float(_d1(table.partner, table.length, a, b))


def d2(a: int, b: int, table: AdjacencyTable) -> float:
    """Overlap of the truncated two-hop partner multisets of ``a`` and ``b``."""
    _table_lengths(table, a, b)
    return float(_d2(table.partner, table.length, a, b, truncation_width(table.capacity)))


@dataclass
class HyperEventCandidate:
    query: Event
    history: list[Event]
    indices: list[int]

    def __len__(self) -> int:
        return len(self.history)


def extract_hyper_event(query: Event, table: AdjacencyTable, n_latest: int) -> HyperEventCandidate:
    us, vs = int(query[0]), int(query[1])
    _table_lengths(table, us, vs)
    hs = np.empty(2 * n_latest, dtype=np.int64)
    hd = np.empty_like(hs)
    ht = np.empty_like(hs)
    hi = np.empty_like(hs)
    n = _extract(table.src, table.dst, table.t, table.idx, table.length, us, vs, n_latest,
                 hs, hd, ht, hi)
    history = [Event(int(hs[r]), int(hd[r]), int(ht[r])) for r in range(n)]
    return HyperEventCandidate(Event(us, vs, int(query[2])), history, hi[:n].tolist())


def encode_sequence(candidate: HyperEventCandidate, table: AdjacencyTable,
                    mode: str = "enhanced-12d") -> np.ndarray:
    """``(max(len(history), 1), dim)`` correlation matrix in chronological row order."""
    dim = mode_dim(mode)
    us, vs = int(candidate.query[0]), int(candidate.query[1])
    nodes = [us, vs] + [x for e in candidate.history for x in (e[0], e[1])]
    _table_lengths(table, *nodes)
    n = len(candidate.history)
    hs = np.array([e[0] for e in candidate.history], dtype=np.int64)
    hd = np.array([e[1] for e in candidate.history], dtype=np.int64)
    out = np.zeros((max(n, 1), dim))
    _encode_rows(table.partner, table.length, us, vs, hs, hd, n,
                 truncation_width(table.capacity), dim == 12, out)
    return out


def featurize(table: AdjacencyTable, qs, qd, n_latest: int, mode: str = "enhanced-12d",
              with_history: bool = False):
    """Batch encoding of queries ``(qs[i], qd[i])`` against one frozen table.

    Returns ``(features, lengths)`` with features zero-padded to
    ``2 * n_latest`` rows, plus the history stream indices if requested.
    """
    qs = np.ascontiguousarray(qs, dtype=np.int64)
    qd = np.ascontiguousarray(qd, dtype=np.int64)
    if len(qs):
        _table_lengths(table, int(qs.max()), int(qd.max()))
    dim = mode_dim(mode)
    lmax = max(2 * n_latest, 1)
    out = np.zeros((len(qs), lmax, dim))
    lens = np.zeros(len(qs), dtype=np.int64)
    hist = np.empty((len(qs), lmax), dtype=np.int64)
    featurize_kernel(table.src, table.dst, table.t, table.idx, table.partner, table.length,
                     qs, qd, n_latest, truncation_width(table.capacity), dim == 12, out, lens, hist)
    if with_history:
        return out, lens, hist
    return out, lens
