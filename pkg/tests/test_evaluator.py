import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hevlink.adjacency import AdjacencyTable
from hevlink.discriminator import Discriminator, DiscriminatorConfig
from hevlink.evaluator import EvalResult, evaluate_split, rank_from_scores, score_query
from hevlink.stream import EvalQuery
from hevlink.synth import SynthConfig, generate
from hevlink.trainer import TrainConfig

import oracles

CFG = TrainConfig(n_neighbor=6, n_latest=3)


@pytest.fixture(scope="module")
def data():
    return generate(SynthConfig(node_count=40, community_count=4, events_total=800,
                                negatives_k=8, seed=11))


def _trained_like(seed=0):
    m = Discriminator.create(CFG.discriminator_config(), seed)
    rng = np.random.default_rng(seed)
    for k, v in m.params.items():
        m.params[k] = np.array(v + 0.2 * rng.standard_normal(np.shape(v)))
    return m


def _start(data):
    tab = AdjacencyTable(CFG.n_neighbor, data.stream.node_count)
    tab.apply_stream(data.stream, data.split.train)
    return tab


def test_rank_hand_case():
    r = rank_from_scores(0.9, [0.95, 0.9, 0.1])
    assert (r.optimistic, r.pessimistic, r.rank, r.reciprocal) == (1, 2, 2.5, 0.4)


def test_rank_perfect_and_tied():
    assert rank_from_scores(0.9, [0.1, 0.2]).reciprocal == 1.0
    r = rank_from_scores(0.5, [0.5] * 20)
    assert (r.optimistic, r.pessimistic, r.rank) == (0, 20, 11.0)
    assert r.reciprocal == 1 / 11


@given(st.floats(0, 1), st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0, 1))
def test_rank_properties(pos, negs, extra):
    r = rank_from_scores(pos, negs)
    assert (r.optimistic, r.pessimistic, r.rank) == oracles.rank(pos, negs)
    assert 0 <= r.optimistic <= r.pessimistic <= len(negs)
    assert 0 < r.reciprocal <= 1
    r2 = rank_from_scores(pos, negs + [extra])
    if extra < pos:
        assert r2.rank == r.rank
    elif extra > pos:
        assert r2.rank == r.rank + 1


def test_mean_of_reciprocals():
    res = EvalResult(0.7, [], np.zeros(2), np.array([0, 1]), np.array([0, 2]))
    assert res.reciprocal.tolist() == [1.0, 0.4]
    assert res.reciprocal.mean() == pytest.approx(0.7)


def test_untrained_model_is_all_tie(data):
    m = Discriminator.create(CFG.discriminator_config(), 0)
    res = evaluate_split(data.queries("val"), _start(data), m, CFG)
    assert (res.optimistic == 0).all() and (res.pessimistic == 8).all()
    assert res.mrr == pytest.approx(1 / 5, rel=1e-12)


def test_segmented_equals_sequential(data):
    m = _trained_like()
    q = data.queries("val")
    seq_tab = _start(data)
    seq = evaluate_split(q, seq_tab, m, CFG)
    for n_seg, threads in ((2, 1), (4, 1), (7, 3)):
        tab = _start(data)
        seg = evaluate_split(q, tab, m, CFG, n_segment_eval=n_seg, threads=threads)
        assert np.array_equal(seg.pos_score, seq.pos_score)
        assert np.array_equal(seg.optimistic, seq.optimistic)
        assert np.array_equal(seg.pessimistic, seq.pessimistic)
        assert tab == seq_tab


def test_table_gains_exactly_the_positives(data):
    m = _trained_like()
    tab = _start(data)
    evaluate_split(data.queries("val"), tab, m, CFG)
    ref = AdjacencyTable(CFG.n_neighbor, tab.node_count)
    ref.apply_stream(data.stream, range(data.split.val.stop))
    assert tab == ref


def test_params_untouched(data):
    m = _trained_like()
    before = {k: v.copy() for k, v in m.params.items()}
    evaluate_split(data.queries("val")[:20], _start(data), m, CFG)
    assert all(np.array_equal(before[k], m.params[k]) for k in before)


def test_score_query_matches_stream_and_keeps_table(data):
    m = _trained_like()
    q = data.queries("val")
    tab = _start(data)
    snapshot = tab.copy()
    r = score_query(q[0], tab, m, CFG)
    assert tab == snapshot
    res = evaluate_split(q[:1], tab, m, CFG)
    assert (r.optimistic, r.pessimistic) == (res.optimistic[0], res.pessimistic[0])


def test_perfect_scorer():
    # unseen negatives have empty history, so any positive-weight linear head on
    # the 1-hop columns ranks the repeated true pair first
    cfg = DiscriminatorConfig(input_dim=12, model_dim=4, layers=1, heads=1, ffn_dim=4, linear_head=True)
    m = Discriminator.create(cfg, 0)
    m.params["in.W"][:] = 0.0
    m.params["pos"][:] = 0.0
    m.params["in.W"][4:8, 0] = 1.0
    m.params["head.w"][0] = 5.0
    tab = AdjacencyTable(3, 30)
    for k in range(5):
        tab.insert((0, 1, k))
    qs = [EvalQuery((0, 1, 10 + k), np.arange(10, 20)) for k in range(4)]
    res = evaluate_split(qs, tab, m, TrainConfig(n_neighbor=3, n_latest=2))
    assert res.mrr == 1.0


def test_dump_and_summary(tmp_path, data):
    m = _trained_like()
    res = evaluate_split(data.queries("val")[:10], _start(data), m, CFG)
    res.write_dump(tmp_path / "q.csv", data.stream.raw_ids)
    lines = (tmp_path / "q.csv").read_text().splitlines()
    assert lines[0] == "src,dst,t,pos_score,optimistic,pessimistic,rank,reciprocal"
    assert len(lines) == 11
    s, d, t = data.stream.raw_event(data.split.val.start)
    assert lines[1].startswith(f"{s},{d},{t},")
    res.write_summary(tmp_path / "s.json", config_hash="x")
    summ = json.loads((tmp_path / "s.json").read_text())
    assert summ["queries"] == 10 and summ["mrr"] == round(res.mrr, 4)
