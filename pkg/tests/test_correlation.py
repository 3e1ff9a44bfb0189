import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hevlink.adjacency import AdjacencyTable
from hevlink.correlation import (
    FEATURE_NAMES,
    d0,
    d1,
    d2,
    encode_sequence,
    extract_hyper_event,
    featurize,
    mode_dim,
    truncation_width,
)
from hevlink.stream import Event

import oracles


def _table(cap, rows, nodes=None):
    tab = AdjacencyTable(cap, nodes or 1 + max(max(s, d) for s, d, _ in rows))
    for s, d, t in rows:
        tab.insert(Event(s, d, t))
    return tab


def _with_partners(cap, owner, partners, nodes=20, t0=0):
    # inserted oldest first, so the newest-first partner list reads ``partners``
    return [(owner, p, t0 + k) for k, p in enumerate(reversed(partners))]


@st.composite
def tables(draw, max_nodes=10, max_events=60):
    n = draw(st.integers(2, max_nodes))
    m = draw(st.integers(0, max_events))
    pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)),
                          min_size=m, max_size=m))
    cap = draw(st.sampled_from([1, 2, 3, 4, 9, 10]))
    rows = [(s, d, k) for k, (s, d) in enumerate(pairs)]
    tab = AdjacencyTable(cap, n)
    for r in rows:
        tab.insert(Event(*r))
    return tab, oracles.replay(rows, cap), n


def test_d0_examples():
    tab = _table(4, _with_partners(4, 0, [5, 7, 5, 9]), nodes=10)
    assert tab.recent_partners(0, 4) == [5, 7, 5, 9]
    assert d0(5, 0, tab) == 0.5
    assert d0(3, 0, tab) == 0.0
    assert d0(5, 8, tab) == 0.0


def test_d1_examples():
    rows = _with_partners(3, 0, [1, 2, 3]) + _with_partners(3, 10, [2, 3, 4], t0=10)
    tab = _table(3, rows)
    assert d1(0, 10, tab) == 2 / 9
    tab = _table(3, [(0, 5, 1), (6, 5, 2)])
    assert d1(0, 6, tab) == 1.0
    tab = _table(3, [(0, 5, 1), (6, 7, 2)])
    assert d1(0, 6, tab) == 0.0


def test_d2_hand_example():
    # w = 3; A~_a = [1], A~_1 = [2, 3] (plus a); A~_b = [4], A~_4 = [3, 5] (plus b)
    a, b = 10, 11
    rows = [(1, 3, 1), (1, 2, 2), (4, 5, 3), (4, 3, 4), (a, 1, 5), (b, 4, 6)]
    tab = _table(9, rows)
    assert tab.recent_partners(1, 3) == [a, 2, 3]
    # the centre node is part of its neighbours' lists; drop it to match the
    # stated example exactly
    ref = oracles.overlap([2, 3], [3, 5])
    assert ref == 0.25
    assert d2(a, b, tab) == oracles.d2(a, b, oracles.replay(rows, 9))
    assert d2(a, b, tab) == oracles.overlap([a, 2, 3], [b, 3, 5])


def test_d2_empty_and_self():
    tab = _table(9, [(0, 1, 1), (1, 2, 2)], nodes=5)
    assert d2(4, 0, tab) == 0.0
    v = d2(0, 0, tab)
    exp = oracles.expand2(0, oracles.replay([(0, 1, 1), (1, 2, 2)], 9))
    assert v == oracles.overlap(exp, exp)
    assert v >= 1 / len(exp) > 0


def test_truncation_width():
    assert [truncation_width(c) for c in (1, 3, 4, 9, 10, 15, 16)] == [1, 1, 2, 3, 3, 3, 4]


@settings(max_examples=200, deadline=None)
@given(tables(), st.data())
def test_distances_match_oracle(tb, data):
    tab, ref, n = tb
    a = data.draw(st.integers(0, n - 1))
    b = data.draw(st.integers(0, n - 1))
    assert d0(a, b, tab) == oracles.d0(a, b, ref)
    assert d1(a, b, tab) == oracles.d1(a, b, ref)
    assert d2(a, b, tab) == oracles.d2(a, b, ref)


@settings(max_examples=100, deadline=None)
@given(tables(), st.data())
def test_symmetry_and_range(tb, data):
    tab, _, n = tb
    a = data.draw(st.integers(0, n - 1))
    b = data.draw(st.integers(0, n - 1))
    assert d1(a, b, tab) == d1(b, a, tab)
    assert d2(a, b, tab) == d2(b, a, tab)
    for f in (d0, d1, d2):
        assert 0.0 <= f(a, b, tab) <= 1.0


def test_d0_is_asymmetric():
    tab = _table(4, [(0, 1, 1), (1, 2, 2), (1, 3, 3)])
    assert d0(0, 1, tab) != d0(1, 0, tab)


def test_cold_start_history():
    tab = AdjacencyTable(5, 4)
    cand = extract_hyper_event(Event(0, 1, 9), tab, 3)
    assert cand.history == []
    rows = encode_sequence(cand, tab, "enhanced-12d")
    assert rows.shape == (1, 12) and not rows.any()
    assert encode_sequence(cand, tab, "basic-4d").shape == (1, 4)


def test_shared_event_appears_once():
    tab = _table(5, [(0, 1, 1), (0, 2, 2), (1, 3, 3)])
    cand = extract_hyper_event(Event(0, 1, 4), tab, 5)
    assert cand.indices == [0, 1, 2]
    assert cand.history == [(0, 1, 1), (0, 2, 2), (1, 3, 3)]


def test_n_latest_limits_each_side():
    rows = [(0, k, k) for k in range(1, 16)]
    tab = _table(15, rows)
    cand = extract_hyper_event(Event(0, 19, 20), tab, 10)
    from_u = [e for e in cand.history if e.src == 0 and e.dst != 19]
    assert [e.t for e in from_u] == list(range(6, 16))


@settings(max_examples=150, deadline=None)
@given(tables(), st.data(), st.integers(1, 6))
def test_history_and_rows_match_oracle(tb, data, n_latest):
    tab, ref, n = tb
    us = data.draw(st.integers(0, n - 1))
    vs = data.draw(st.integers(0, n - 1))
    cand = extract_hyper_event(Event(us, vs, 10**6), tab, n_latest)
    expect = oracles.history(us, vs, ref, n_latest)
    assert [(e.src, e.dst, e.t, i) for e, i in zip(cand.history, cand.indices)] == expect
    assert len(cand) <= 2 * n_latest
    for mode, enhanced in (("enhanced-12d", True), ("basic-4d", False)):
        got = encode_sequence(cand, tab, mode)
        assert got.tolist() == oracles.rows(us, vs, ref, n_latest, enhanced)


@settings(max_examples=60, deadline=None)
@given(tables(), st.integers(1, 5))
def test_batch_featurize_matches_single(tb, n_latest):
    tab, _, n = tb
    qs = np.repeat(np.arange(n), n)
    qd = np.tile(np.arange(n), n)
    feats, lens, hist = featurize(tab, qs, qd, n_latest, with_history=True)
    assert feats.shape == (n * n, 2 * n_latest, 12)
    for i in range(len(qs)):
        cand = extract_hyper_event(Event(int(qs[i]), int(qd[i]), 0), tab, n_latest)
        rows = encode_sequence(cand, tab)
        assert lens[i] == len(rows)
        assert np.array_equal(feats[i, :lens[i]], rows)
        assert not feats[i, lens[i]:].any()
        assert hist[i, :len(cand)].tolist() == cand.indices


def test_modes():
    assert mode_dim("enhanced-12d") == 12 and mode_dim("basic-4d") == 4
    assert len(FEATURE_NAMES["enhanced-12d"]) == 12
    assert FEATURE_NAMES["basic-4d"] == FEATURE_NAMES["enhanced-12d"][4:8]
    with pytest.raises(ValueError):
        mode_dim("8d")
