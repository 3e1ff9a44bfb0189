import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hevlink.errors import EmptySplit, MalformedRow, NonMonotonicTimestamp, QueryEventMismatch, DataError
from hevlink.stream import (
    EventStream,
    ingest_events,
    load_eval_queries,
    load_id_map,
    save_id_map,
    split_stream,
    write_cache,
    write_csv,
    write_eval_queries,
)


def _csv(tmp_path, text, name="ev.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_small_csv(tmp_path):
    s = ingest_events(_csv(tmp_path, "src,dst,t\n0,1,5\n0,2,5\n1,2,6\n"))
    assert len(s) == 3
    assert s.node_count == 3
    assert list(s) == [(0, 1, 5), (0, 2, 5), (1, 2, 6)]


def test_dense_ids_follow_first_appearance(tmp_path):
    s = ingest_events(_csv(tmp_path, "src,dst,t\n70,3,1\n3,9,2\n9,70,2\n"))
    assert s.raw_ids.tolist() == [70, 3, 9]
    assert s.src.tolist() == [0, 1, 2]
    assert s.dst.tolist() == [1, 2, 0]
    assert s.raw_event(2) == (9, 70, 2)


def test_non_monotonic_row_number(tmp_path):
    with pytest.raises(NonMonotonicTimestamp) as exc:
        ingest_events(_csv(tmp_path, "src,dst,t\n0,1,5\n1,2,4\n"))
    assert exc.value.row == 2


@pytest.mark.parametrize("body", ["0,1\n", "a,1,2\n", "0,-1,3\n", "0,1,2.5\n"])
def test_malformed_rows(tmp_path, body):
    with pytest.raises(MalformedRow):
        ingest_events(_csv(tmp_path, "src,dst,t\n" + body))


def test_extra_columns_ignored(tmp_path):
    s = ingest_events(_csv(tmp_path, "src,dst,t,w\n0,1,5,0.3\n1,0,6,9\n"))
    assert list(s) == [(0, 1, 5), (1, 0, 6)]


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="missing.csv"):
        ingest_events(tmp_path / "missing.csv")


def test_duplicate_rows_retained(tmp_path):
    s = ingest_events(_csv(tmp_path, "src,dst,t\n0,1,5\n0,1,5\n"))
    assert len(s) == 2


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1),
                          st.integers(0, 50)), max_size=40))
def test_cache_round_trip(tmp_path_factory, rows):
    rows = sorted(rows, key=lambda r: r[2])
    d = tmp_path_factory.mktemp("rt")
    csv_path = d / "e.csv"
    csv_path.write_text("src,dst,t\n" + "".join(f"{a},{b},{t}\n" for a, b, t in rows))
    s = ingest_events(csv_path)
    write_cache(s, d / "e.hev")
    back = ingest_events(d / "e.hev")
    assert back.identical(s)
    write_csv(back, d / "again.csv")
    assert (d / "again.csv").read_text() == csv_path.read_text()


def test_id_map_round_trip(tmp_path):
    s = ingest_events(_csv(tmp_path, "src,dst,t\n5,8,1\n8,2,3\n"))
    save_id_map(s, tmp_path / "ids.csv")
    assert load_id_map(tmp_path / "ids.csv").tolist() == [5, 8, 2]


def test_split_sizes():
    sp = split_stream(100)
    assert (len(sp.train), len(sp.val), len(sp.test)) == (70, 15, 15)
    assert sp.val.start == sp.train.stop and sp.test.start == sp.val.stop == 85
    with pytest.raises(EmptySplit):
        split_stream(3)
    with pytest.raises(EmptySplit):
        split_stream(100, (0.5, 0.2, 0.2))


@given(st.integers(7, 10_000))
def test_split_partitions_stream(n):
    sp = split_stream(n)
    assert len(sp.train) + len(sp.val) + len(sp.test) == n
    assert sp.train.start == 0 and sp.test.stop == n


def _stream():
    return EventStream(np.array([0, 1, 2, 0]), np.array([1, 2, 0, 2]), np.array([1, 2, 3, 4]),
                       np.array([10, 11, 12]))


def test_eval_query_file_round_trip(tmp_path):
    s = _stream()
    write_eval_queries(tmp_path / "neg.txt", s, range(2, 4), [[11, 99], [10, 11]])
    qs = load_eval_queries(tmp_path / "neg.txt", s, range(2, 4))
    assert [q.positive for q in qs] == [s[2], s[3]]
    # unseen raw id 99 gets a fresh dense id
    assert qs[0].negatives.tolist() == [1, 3]
    assert s.raw_ids[3] == 99


def test_eval_query_misaligned(tmp_path):
    s = _stream()
    (tmp_path / "neg.txt").write_text("12,10,3,11\n10,12,5,11\n")
    with pytest.raises(QueryEventMismatch) as exc:
        load_eval_queries(tmp_path / "neg.txt", s, range(2, 4))
    assert exc.value.line == 2


def test_eval_query_positive_among_negatives(tmp_path):
    s = _stream()
    (tmp_path / "neg.txt").write_text("12,10,3,10 11\n")
    with pytest.raises(QueryEventMismatch):
        load_eval_queries(tmp_path / "neg.txt", s, range(2, 3))


def test_eval_query_count_mismatch(tmp_path):
    s = _stream()
    (tmp_path / "neg.txt").write_text("12,10,3,11\n")
    with pytest.raises(QueryEventMismatch):
        load_eval_queries(tmp_path / "neg.txt", s, range(2, 4))
