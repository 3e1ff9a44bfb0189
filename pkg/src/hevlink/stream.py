"""Event-stream ingestion, chronological splitting and evaluation-query files.

Node identifiers are remapped to a dense ``0..|V|-1`` range in order of first
appearance (source before destination within a row) so that per-node storage
downstream can be a plain array indexed by node id.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import (
    DataError,
    EmptySplit,
    MalformedRow,
    NonMonotonicTimestamp,
    QueryEventMismatch,
    ReservedId,
)

PAD = -1
CACHE_MAGIC = b"HEV1"
_CACHE_HEADER = struct.Struct("<4sQ")
_CACHE_RECORD = np.dtype([("src", "<u4"), ("dst", "<u4"), ("t", "<u8")])


class Event(NamedTuple):
    src: int
    dst: int
    t: int


@dataclass
class EventStream:
    """Chronological events over dense node ids.

    ``raw_ids[k]`` is the original identifier of dense node ``k``.
    """

    src: np.ndarray
    dst: np.ndarray
    t: np.ndarray
    raw_ids: np.ndarray
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.src = np.ascontiguousarray(self.src, dtype=np.int64)
        self.dst = np.ascontiguousarray(self.dst, dtype=np.int64)
        self.t = np.ascontiguousarray(self.t, dtype=np.int64)
        self.raw_ids = np.ascontiguousarray(self.raw_ids, dtype=np.int64)
        if self._index is None:
            self._index = {int(r): k for k, r in enumerate(self.raw_ids)}

    def __len__(self) -> int:
        return len(self.src)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.src[i]), int(self.dst[i]), int(self.t[i]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    @property
    def node_count(self) -> int:
        return len(self.raw_ids)

    def events(self) -> list[Event]:
        return list(self)

    def dense_id(self, raw: int, grow: bool = False) -> int:
        """Dense id for ``raw``; unseen ids are appended when ``grow`` is set."""
        k = self._index.get(raw)
        if k is None:
            if not grow:
                raise KeyError(raw)
            k = len(self.raw_ids)
            self._index[raw] = k
            self.raw_ids = np.append(self.raw_ids, np.int64(raw))
        return k

    def raw_event(self, i: int) -> Event:
        return Event(int(self.raw_ids[self.src[i]]), int(self.raw_ids[self.dst[i]]), int(self.t[i]))

    def slice(self, r: range) -> "EventStream":
        """Events in ``r``; shares the node index with ``self``."""
        return EventStream(self.src[r.start:r.stop], self.dst[r.start:r.stop],
                           self.t[r.start:r.stop], self.raw_ids, self._index)

    def identical(self, other: "EventStream") -> bool:
        return (np.array_equal(self.src, other.src) and np.array_equal(self.dst, other.dst)
                and np.array_equal(self.t, other.t) and np.array_equal(self.raw_ids, other.raw_ids))


def _remap(raw_src: np.ndarray, raw_dst: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = len(raw_src)
    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy()
    inter = np.empty(2 * n, dtype=np.int64)
    inter[0::2] = raw_src
    inter[1::2] = raw_dst
    uniq, first, inverse = np.unique(inter, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[order] = np.arange(len(uniq), dtype=np.int64)
    dense = rank[inverse.ravel()]
    return dense[0::2].copy(), dense[1::2].copy(), uniq[order]


def _check_monotone(t: np.ndarray, row_offset: int) -> None:
    if len(t) > 1:
        bad = np.flatnonzero(t[1:] < t[:-1])
        if len(bad):
            i = int(bad[0]) + 1
            raise NonMonotonicTimestamp(i + row_offset, int(t[i - 1]), int(t[i]))


def _parse_id(tok: str, row: int, name: str) -> int:
    try:
        v = int(tok)
    except ValueError:
        raise MalformedRow(row, f"{name} {tok!r} is not an integer") from None
    if v < 0:
        raise MalformedRow(row, f"{name} {v} is negative")
    return v


def _read_csv(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    src, dst, ts = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["src", "dst", "t"]:
            raise MalformedRow(0, f"expected header 'src,dst,t', got {header!r}")
        # data rows are numbered from 1; row 1 is the first event
        for row, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) < 3:
                raise MalformedRow(row, f"expected at least 3 fields, got {len(rec)}")
            src.append(_parse_id(rec[0], row, "src"))
            dst.append(_parse_id(rec[1], row, "dst"))
            # real-valued timestamps are rejected, not quantized
            ts.append(_parse_id(rec[2], row, "t"))
    return (np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64),
            np.asarray(ts, dtype=np.int64))


def _read_cache(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    data = path.read_bytes()
    if len(data) < _CACHE_HEADER.size:
        raise DataError(f"{path}: truncated binary cache")
    magic, count = _CACHE_HEADER.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    body = data[_CACHE_HEADER.size:]
    if len(body) != count * _CACHE_RECORD.itemsize:
        raise DataError(f"{path}: expected {count} records, found {len(body)} bytes")
    rec = np.frombuffer(body, dtype=_CACHE_RECORD)
    if np.any(rec["t"] > np.iinfo(np.int64).max):
        raise DataError(f"{path}: timestamp overflows int64")
    return (rec["src"].astype(np.int64), rec["dst"].astype(np.int64), rec["t"].astype(np.int64))


def ingest_events(path, format: str | None = None) -> EventStream:
    """Read and validate an event file.

    ``format`` is ``"csv"`` or ``"binary-cache"``; when omitted it is sniffed
    from the leading magic bytes.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"events file not found: {path}")
    if format is None:
        with open(path, "rb") as fh:
            format = "binary-cache" if fh.read(4) == CACHE_MAGIC else "csv"
    if format == "csv":
        src, dst, t = _read_csv(path)
    elif format == "binary-cache":
        src, dst, t = _read_cache(path)
    else:
        raise ValueError(f"unknown format {format!r}")
    _check_monotone(t, 1)
    dsrc, ddst, raw_ids = _remap(src, dst)
    if len(dsrc) and (dsrc.min() == PAD or ddst.min() == PAD):
        raise ReservedId("dense id collides with the padding sentinel")
    return EventStream(dsrc, ddst, t, raw_ids)


def write_cache(stream: EventStream, path) -> None:
    """Write the binary cache; records hold raw ids so re-ingest is identical."""
    raw_src = stream.raw_ids[stream.src] if len(stream) else stream.src
    raw_dst = stream.raw_ids[stream.dst] if len(stream) else stream.dst
    if len(stream) and (raw_src.max() > 0xFFFFFFFF or raw_dst.max() > 0xFFFFFFFF):
        raise DataError("raw node id does not fit in u32")
    rec = np.empty(len(stream), dtype=_CACHE_RECORD)
    rec["src"] = raw_src
    rec["dst"] = raw_dst
    rec["t"] = stream.t
    with open(path, "wb") as fh:
        fh.write(_CACHE_HEADER.pack(CACHE_MAGIC, len(stream)))
        fh.write(rec.tobytes())


def write_csv(stream: EventStream, path) -> None:
    raw = stream.raw_ids
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("src,dst,t\n")
        for s, d, t in zip(raw[stream.src].tolist(), raw[stream.dst].tolist(), stream.t.tolist()):
            fh.write(f"{s},{d},{t}\n")


def save_id_map(stream: EventStream, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("dense,raw\n")
        for k, r in enumerate(stream.raw_ids.tolist()):
            fh.write(f"{k},{r}\n")


def load_id_map(path) -> np.ndarray:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    if not np.array_equal(rows[:, 0], np.arange(len(rows))):
        raise DataError(f"{path}: dense ids are not 0..n-1")
    return rows[:, 1]


@dataclass(frozen=True)
class StreamSplit:
    train: range
    val: range
    test: range


def split_stream(events: Sequence | EventStream | int,
                 fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)) -> StreamSplit:
    """Contiguous chronological split by event count.

    ``|train| = floor(f_train*n)``, ``|val| = floor(f_val*n)``, test takes the rest.
    """
    n = events if isinstance(events, int) else len(events)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise EmptySplit(f"fractions must be three positive numbers, got {fractions}")
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise EmptySplit(f"fractions must sum to 1, got {sum(fractions)}")
    # tolerance keeps e.g. 0.29*100 from flooring to 28
    n_train = math.floor(fractions[0] * n + 1e-9)
    n_val = math.floor(fractions[1] * n + 1e-9)
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise EmptySplit(f"{n} events cannot be split as {fractions}: "
                         f"sizes {n_train}/{n_val}/{n_test}")
    return StreamSplit(range(0, n_train), range(n_train, n_train + n_val),
                       range(n_train + n_val, n))


@dataclass
class EvalQuery:
    positive: Event
    negatives: np.ndarray

    def __post_init__(self):
        self.negatives = np.asarray(self.negatives, dtype=np.int64)
        if len(self.negatives) == 0:
            raise ValueError("query has no negatives")


def load_eval_queries(path, stream: EventStream, split_range: range) -> list[EvalQuery]:
    """Parse a negatives file aligned 1:1 with ``stream`` events in ``split_range``.

    Each line is ``src,dst,t,n1 n2 ...`` in raw ids. Negative ids never seen
    in the stream are given fresh dense ids (they have empty history).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"negatives file not found: {path}")
    queries: list[EvalQuery] = []
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if len(lines) != len(split_range):
        raise QueryEventMismatch(min(len(lines), len(split_range)) + 1,
                                 f"{len(lines)} queries for {len(split_range)} split events")
    for lineno, (ln, ev_i) in enumerate(zip(lines, split_range), start=1):
        parts = ln.split(",")
        if len(parts) != 4:
            raise QueryEventMismatch(lineno, f"expected 'src,dst,t,negatives', got {ln!r}")
        try:
            s, d, t = int(parts[0]), int(parts[1]), int(parts[2])
            negs_raw = [int(x) for x in parts[3].split()]
        except ValueError:
            raise QueryEventMismatch(lineno, f"unparseable line {ln!r}") from None
        expected = stream.raw_event(ev_i)
        if (s, d, t) != tuple(expected):
            raise QueryEventMismatch(
                lineno, f"query {(s, d, t)} does not match split event {tuple(expected)}")
        if not negs_raw:
            raise QueryEventMismatch(lineno, "no negatives")
        if d in negs_raw:
            raise QueryEventMismatch(lineno, f"negatives contain the positive destination {d}")
        negs = np.array([stream.dense_id(x, grow=True) for x in negs_raw], dtype=np.int64)
        queries.append(EvalQuery(stream[ev_i], negs))
    return queries


def write_eval_queries(path, stream: EventStream, split_range: range,
                       negatives: Sequence[Sequence[int]]) -> None:
    """Write a negatives file; ``negatives`` are raw ids, one list per split event."""
    with open(path, "w", encoding="utf-8") as fh:
        for ev_i, negs in zip(split_range, negatives):
            s, d, t = stream.raw_event(ev_i)
            fh.write(f"{s},{d},{t},{' '.join(str(int(x)) for x in negs)}\n")
