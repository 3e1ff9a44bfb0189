"""Per-node tables of the most recent interaction events.

Each node owns a newest-first list of at most ``capacity`` full event records
``(src, dst, t, stream_index)``. A self-loop adds a single entry to its owner.
Storage is a set of dense ``(node_count, capacity)`` arrays, so lookups are
O(1) and insertion is O(capacity) regardless of graph size.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .errors import DataError, StaleEvent
from .stream import PAD, Event, EventStream

SNAPSHOT_MAGIC = b"HEVA"
_SNAP_HEADER = struct.Struct("<4sIQQq")  # magic, capacity, node_count, cursor, boundary_time
_SNAP_RECORD = np.dtype([("src", "<u4"), ("dst", "<u4"), ("t", "<i8"), ("idx", "<i8")])


@numba.njit(cache=True, nogil=True)
def _push(src_a, dst_a, t_a, idx_a, part_a, length, owner, partner, s, d, t, idx):
    cap = src_a.shape[1]
    n = length[owner]
    m = n if n < cap else cap - 1
    for j in range(m, 0, -1):
        src_a[owner, j] = src_a[owner, j - 1]
        dst_a[owner, j] = dst_a[owner, j - 1]
        t_a[owner, j] = t_a[owner, j - 1]
        idx_a[owner, j] = idx_a[owner, j - 1]
        part_a[owner, j] = part_a[owner, j - 1]
    src_a[owner, 0] = s
    dst_a[owner, 0] = d
    t_a[owner, 0] = t
    idx_a[owner, 0] = idx
    part_a[owner, 0] = partner
    length[owner] = m + 1


@numba.njit(cache=True, nogil=True)
def insert_kernel(src_a, dst_a, t_a, idx_a, part_a, length, s, d, t, idx):
    """Returns 0 on success, 1 if the event is older than a stored one."""
    if length[s] > 0 and t < t_a[s, 0]:
        return 1
    if length[d] > 0 and t < t_a[d, 0]:
        return 1
    _push(src_a, dst_a, t_a, idx_a, part_a, length, s, d, s, d, t, idx)
    if d != s:
        _push(src_a, dst_a, t_a, idx_a, part_a, length, d, s, s, d, t, idx)
    return 0


@numba.njit(cache=True, nogil=True)
def apply_kernel(src_a, dst_a, t_a, idx_a, part_a, length, es, ed, et, eidx):
    """Insert a run of events, skipping padding slots.

    Returns ``(applied, skipped, first_stale_position)``; the last is -1 when
    every event was accepted.
    """
    applied = 0
    skipped = 0
    for i in range(es.shape[0]):
        if es[i] == -1:
            skipped += 1
            continue
        if insert_kernel(src_a, dst_a, t_a, idx_a, part_a, length,
                         es[i], ed[i], et[i], eidx[i]) != 0:
            return applied, skipped, i
        applied += 1
    return applied, skipped, -1


class AdjacencyTable:
    """Bounded newest-first event lists for every node.

    ``cursor`` is the stream index the next inserted event receives; it equals
    the number of stream events already applied.
    """

    _FIELDS = ("src", "dst", "t", "idx", "partner")

    def __init__(self, capacity: int, node_count: int, cursor: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.cursor = int(cursor)
        shape = (int(node_count), self.capacity)
        self.src = np.full(shape, PAD, dtype=np.int64)
        self.dst = np.full(shape, PAD, dtype=np.int64)
        self.t = np.full(shape, PAD, dtype=np.int64)
        self.idx = np.full(shape, PAD, dtype=np.int64)
        self.partner = np.full(shape, PAD, dtype=np.int64)
        self.length = np.zeros(shape[0], dtype=np.int64)

    @property
    def node_count(self) -> int:
        return self.length.shape[0]

    def arrays(self):
        return self.src, self.dst, self.t, self.idx, self.partner, self.length

    def ensure_nodes(self, node_count: int) -> None:
        extra = node_count - self.node_count
        if extra <= 0:
            return
        pad = np.full((extra, self.capacity), PAD, dtype=np.int64)
        for name in self._FIELDS:
            setattr(self, name, np.concatenate([getattr(self, name), pad]))
        self.length = np.concatenate([self.length, np.zeros(extra, dtype=np.int64)])

    def copy(self) -> "AdjacencyTable":
        out = AdjacencyTable.__new__(AdjacencyTable)
        out.capacity = self.capacity
        out.cursor = self.cursor
        for name in self._FIELDS + ("length",):
            setattr(out, name, getattr(self, name).copy())
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, AdjacencyTable):
            return NotImplemented
        return (self.capacity == other.capacity and self.cursor == other.cursor
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in self._FIELDS + ("length",)))

    def insert(self, e: Event) -> None:
        """Prepend ``e`` to both endpoint lists, evicting the oldest on overflow."""
        s, d, t = int(e[0]), int(e[1]), int(e[2])
        if s < 0 or d < 0:
            raise ValueError("padding events cannot be inserted")
        self.ensure_nodes(max(s, d) + 1)
        if insert_kernel(*self.arrays()[:5], self.length, s, d, t, self.cursor) != 0:
            raise StaleEvent(f"event {e} is older than the newest stored event of an endpoint")
        self.cursor += 1

    def apply(self, src: np.ndarray, dst: np.ndarray, t: np.ndarray) -> int:
        """Insert events in order (``src == -1`` slots are skipped); returns pads skipped.

        Stream indices are assigned from ``cursor`` and advance only for real events.
        """
        src = np.ascontiguousarray(src, dtype=np.int64)
        real = src != PAD
        n_real = int(real.sum())
        if n_real:
            self.ensure_nodes(int(max(src.max(), np.max(dst[real]))) + 1)
        eidx = np.full(len(src), PAD, dtype=np.int64)
        eidx[real] = np.arange(self.cursor, self.cursor + n_real)
        applied, skipped, stale = apply_kernel(
            *self.arrays()[:5], self.length, src,
            np.ascontiguousarray(dst, dtype=np.int64), np.ascontiguousarray(t, dtype=np.int64), eidx)
        self.cursor += applied
        if stale >= 0:
            raise StaleEvent(f"event at position {stale} is older than stored history")
        return skipped

    def apply_stream(self, stream: EventStream, r: range | None = None) -> None:
        r = range(len(stream)) if r is None else r
        self.apply(stream.src[r.start:r.stop], stream.dst[r.start:r.stop], stream.t[r.start:r.stop])

    def entries(self, node: int) -> list[tuple[Event, int]]:
        """Stored ``(event, stream_index)`` pairs for ``node``, newest first."""
        if node >= self.node_count:
            return []
        n = self.length[node]
        return [(Event(int(self.src[node, j]), int(self.dst[node, j]), int(self.t[node, j])),
                 int(self.idx[node, j])) for j in range(n)]

    def recent_partners(self, node: int, k: int) -> list[int]:
        if not 1 <= k <= self.capacity:
            raise ValueError(f"k must lie in [1, {self.capacity}]")
        if node >= self.node_count:
            return []
        n = min(k, int(self.length[node]))
        return self.partner[node, :n].tolist()

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<qq", self.capacity, self.cursor))
        for f in self._FIELDS + ("length",):
            h.update(getattr(self, f).tobytes())
        return h.hexdigest()


def insert_event(table: AdjacencyTable, e: Event) -> AdjacencyTable:
    table.insert(e)
    return table


def recent_partners(table: AdjacencyTable, node: int, k: int) -> list[int]:
    return table.recent_partners(node, k)


@dataclass
class TableSnapshot:
    boundary_index: int
    boundary_time: int
    table: AdjacencyTable


def segment_length(n_events: int, n_segment: int) -> int:
    return max(1, math.ceil(n_events / n_segment)) if n_events else 1


def precompute_snapshots(events: EventStream, n_segment: int, capacity: int | None = None,
                         start: AdjacencyTable | None = None,
                         node_count: int | None = None) -> list[TableSnapshot]:
    """Table states at every segment boundary, built in one cumulative pass.

    ``events`` is the run being segmented; if ``start`` is given it holds the
    state before the run (its cursor is the stream index of ``events[0]``).
    Snapshot ``s`` sits at local offset ``ceil(|E|/n_segment) * s`` (clamped to
    ``|E|`` for all-padding tail segments).
    """
    if n_segment < 1:
        raise ValueError("n_segment must be >= 1")
    if start is None:
        if capacity is None:
            raise ValueError("capacity required when no start table is given")
        start = AdjacencyTable(capacity, node_count if node_count is not None else events.node_count)
    table = start.copy()
    n = len(events)
    seg = segment_length(n, n_segment)
    snaps = []
    done = 0
    for s in range(n_segment):
        b = min(seg * s, n)
        if b > done:
            table.apply(events.src[done:b], events.dst[done:b], events.t[done:b])
            done = b
        bt = int(events.t[b]) if b < n else (int(events.t[-1]) if n else 0)
        snaps.append(TableSnapshot(table.cursor, bt, table.copy()))
    return snaps


def save_snapshot(snap: TableSnapshot, path) -> None:
    tab = snap.table
    with open(path, "wb") as fh:
        fh.write(_SNAP_HEADER.pack(SNAPSHOT_MAGIC, tab.capacity, tab.node_count,
                                   snap.boundary_index, snap.boundary_time))
        fh.write(tab.length.astype("<u4").tobytes())
        for node in range(tab.node_count):
            n = int(tab.length[node])
            rec = np.empty(n, dtype=_SNAP_RECORD)
            rec["src"] = tab.src[node, :n]
            rec["dst"] = tab.dst[node, :n]
            rec["t"] = tab.t[node, :n]
            rec["idx"] = tab.idx[node, :n]
            fh.write(rec.tobytes())


def load_snapshot(path) -> TableSnapshot:
    data = Path(path).read_bytes()
    if len(data) < _SNAP_HEADER.size:
        raise DataError(f"{path}: truncated snapshot")
    magic, cap, n_nodes, cursor, bt = _SNAP_HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    off = _SNAP_HEADER.size
    lengths = np.frombuffer(data, dtype="<u4", count=n_nodes, offset=off).astype(np.int64)
    off += 4 * n_nodes
    total = int(lengths.sum())
    if len(data) - off != total * _SNAP_RECORD.itemsize:
        raise DataError(f"{path}: record block size mismatch")
    rec = np.frombuffer(data, dtype=_SNAP_RECORD, count=total, offset=off)
    tab = AdjacencyTable(cap, n_nodes, cursor)
    pos = 0
    for node in np.flatnonzero(lengths):
        n = int(lengths[node])
        r = rec[pos:pos + n]
        tab.src[node, :n] = r["src"]
        tab.dst[node, :n] = r["dst"]
        tab.t[node, :n] = r["t"]
        tab.idx[node, :n] = r["idx"]
        tab.partner[node, :n] = np.where(r["src"] == node, r["dst"], r["src"])
        pos += n
    tab.length[:] = lengths
    return TableSnapshot(cursor, bt, tab)
