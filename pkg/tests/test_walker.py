import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import spearmanr

from netclass.generators import WsParams, generate_ws
from netclass.graph import GraphError, from_edge_list
from netclass.rng import RngStream
from netclass.walker import (WalkConfig, generate_corpus, transform_weights, transition_distribution,
                             write_corpus)


def test_uniform_transition():
    g = from_edge_list([(0, 1), (0, 2), (0, 3)], directed=False)
    nb, p = transition_distribution(g, 0)
    assert nb.tolist() == [1, 2, 3]
    np.testing.assert_allclose(p, [1 / 3] * 3)


def test_weighted_transition():
    g = from_edge_list([(0, 1, 2.0), (0, 2, 3.0), (0, 3, 5.0)], directed=True)
    _, p = transition_distribution(g, 0)
    np.testing.assert_allclose(p, [0.2, 0.3, 0.5])
    nb, p = transition_distribution(g, 3)
    assert nb.size == 0 and p.size == 0
    with pytest.raises(GraphError):
        transition_distribution(g, 9)


def test_two_cycle_alternates():
    g = from_edge_list([(0, 1), (1, 0)], directed=True)
    c = generate_corpus(g, WalkConfig(1, 4), RngStream(0))
    w = c.walks[0]
    assert len(w) == 4
    assert all(a != b for a, b in zip(w, w[1:]))


def test_sink_truncation():
    g = from_edge_list([(0, 1), (1, 2)], directed=True)
    c = generate_corpus(g, WalkConfig(200, 10), RngStream(1))
    for w in c.walks:
        assert w == list(range(w[0], 3))
    assert [0, 1, 2] in c.walks


def test_errors():
    with pytest.raises(ValueError):
        WalkConfig(0, 10)
    with pytest.raises(ValueError):
        WalkConfig(10, 1)
    g = from_edge_list([(0, 1)], directed=False, node_count=1 + 1)
    generate_corpus(g, WalkConfig(3, 3), RngStream(0))


def test_ws_corpus_visits_track_degree():
    g = generate_ws(WsParams(1000, 8, 0.1), RngStream(4))
    c = generate_corpus(g, WalkConfig(), RngStream(5))
    assert len(c) == 10000
    assert np.all(c.lengths == 10)
    visits = np.bincount(c.paths.ravel(), minlength=1000)
    rho, _ = spearmanr(visits, g.degree())
    assert rho > 0.5


def test_corpus_determinism():
    g = generate_ws(WsParams(100, 4, 0.3), RngStream(0))
    a = generate_corpus(g, WalkConfig(500, 10), RngStream(7, 3))
    b = generate_corpus(g, WalkConfig(500, 10), RngStream(7, 3))
    assert np.array_equal(a.paths, b.paths)


def test_weighted_cycle_frequencies():
    # 0 -> 1 (w=1), 0 -> 2 (w=8); 1 -> 0; 2 -> 0
    g = from_edge_list([(0, 1, 1.0), (0, 2, 8.0), (1, 0, 1.0), (2, 0, 1.0)], directed=True)
    c = generate_corpus(g, WalkConfig(3000, 10), RngStream(2))
    p = c.paths
    nxt = p[:, 1:][p[:, :-1] == 0]
    frac = np.mean(nxt == 2)
    se = np.sqrt((8 / 9) * (1 / 9) / nxt.size)
    assert abs(frac - 8 / 9) < 3 * se


def test_log1p_transform():
    g = from_edge_list([(0, 1, np.e - 1)], directed=True)
    assert transform_weights(g, "log1p").weight[0] == pytest.approx(1.0)
    assert transform_weights(g, "raw") is g
    with pytest.raises(ValueError):
        transform_weights(g, "sqrt")


def test_corpus_dump(tmp_path):
    g = from_edge_list([(0, 1), (1, 2)], directed=True)
    c = generate_corpus(g, WalkConfig(5, 4), RngStream(0))
    write_corpus(c, tmp_path / "walks.txt")
    lines = (tmp_path / "walks.txt").read_text().splitlines()
    assert [list(map(int, l.split())) for l in lines] == c.walks


random_graphs = st.lists(st.tuples(st.integers(0, 12), st.integers(0, 12), st.floats(0.1, 5.0)),
                         min_size=1, max_size=40)


@settings(max_examples=300, deadline=None)
@given(random_graphs, st.booleans(), st.integers(0, 2**32))
def test_walks_follow_edges(records, directed, seed):
    records = [r for r in records if r[0] != r[1]]
    if not records:
        return
    g = from_edge_list(records, directed)
    c = generate_corpus(g, WalkConfig(20, 6), RngStream(seed))
    assert len(c) == 20
    for w in c.walks:
        assert 1 <= len(w) <= 6
        assert all(0 <= v < g.node_count for v in w)
        for a, b in zip(w, w[1:]):
            assert g.has_edge(a, b)
        if len(w) < 6:
            assert g.degree(w[-1]) == 0
    for u in range(g.node_count):
        _, p = transition_distribution(g, u)
        if p.size:
            assert abs(p.sum() - 1.0) < 1e-12
