import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapnet.graphs import (GraphError, HyperGraph, PairGraph, correlation_graph, dtw_distance,
                           dtw_k_hypergraph, hyper_to_pairwise, industry_graph, read_graph,
                           read_membership, write_graph)


def dtw_oracle(x, y):
    """Textbook row-by-row DP table."""
    n, m = len(x), len(y)
    inf = float("inf")
    D = [[inf] * (m + 1) for _ in range(n + 1)]
    D[0][0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d = x[i - 1] - y[j - 1]
            c = d * d
            D[i][j] = c + min(D[i - 1][j], D[i][j - 1], D[i - 1][j - 1])
    return D[n][m]


# -- industry ---------------------------------------------------------------

def test_industry_two_sectors():
    h = industry_graph(list("ABCD"), {"A": "a", "B": "a", "C": "b", "D": "b"})
    assert h.members() == [[0, 1], [2, 3]]


def test_industry_single_sector_and_singletons():
    assert industry_graph(list("ABC"), dict.fromkeys("ABC", "x")).members() == [[0, 1, 2]]
    assert industry_graph(list("ABC"), {"A": "a", "B": "b", "C": "c"}).n_edges == 0


def test_industry_unmapped_ticker():
    with pytest.raises(GraphError, match="'C'"):
        industry_graph(list("ABC"), {"A": "a", "B": "a"})


def test_read_membership(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("ticker,sector\nAAA,tech\nBBB,energy\n")
    assert read_membership(p) == {"AAA": "tech", "BBB": "energy"}


# -- DTW --------------------------------------------------------------------

def test_dtw_hand_table():
    # D for x=[0,1,0], y=[0,0,1,0]:
    #   row 1: 0 0 1 1
    #   row 2: 1 1 0 1
    #   row 3: 1 1 1 0
    assert dtw_distance([0, 1, 0], [0, 0, 1, 0]) == 0.0
    assert dtw_distance([0, 1, 0], [0, 0, 2, 0]) == 1.0


def test_dtw_single_cell_and_identity():
    assert dtw_distance([3.0], [-1.0]) == 16.0
    assert dtw_distance([1.0, 5.0, 2.0], [1.0, 5.0, 2.0]) == 0.0


def test_dtw_empty_rejected():
    with pytest.raises(GraphError):
        dtw_distance([], [1.0])


def test_dtw_matches_dp_oracle_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = rng.normal(size=rng.integers(1, 11))
        y = rng.normal(size=rng.integers(1, 11))
        assert dtw_distance(x, y) == dtw_oracle(x.tolist(), y.tolist())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8),
       st.lists(st.floats(-10, 10), min_size=1, max_size=8))
def test_dtw_symmetric_and_zero_on_self(x, y):
    assert dtw_distance(x, x) == 0.0
    assert dtw_distance(x, y) == pytest.approx(dtw_distance(y, x), rel=1e-12, abs=1e-12)
    assert dtw_distance(x, y) >= 0.0


# -- DTW k-NN hypergraph ------------------------------------------------------

def test_dtw_k_identical_series_merge_to_one_edge():
    series = np.tile(np.arange(5.0), (3, 1))
    assert dtw_k_hypergraph(series, 2).members() == [[0, 1, 2]]


def test_dtw_k_one_on_identical_series_breaks_ties_by_index():
    # every node's nearest other is the lowest index distinct from itself
    series = np.tile(np.arange(5.0), (3, 1))
    assert dtw_k_hypergraph(series, 1).members() == [[0, 1], [0, 2]]


def test_dtw_k_recovers_separated_clusters():
    base = np.linspace(0, 1, 20)
    series = np.vstack([base] * 3 + [base[::-1] * 5] * 3)
    assert dtw_k_hypergraph(series, 2).members() == [[0, 1, 2], [3, 4, 5]]


def test_dtw_k_matches_exhaustive_oracle():
    rng = np.random.default_rng(3)
    series = np.cumsum(rng.normal(size=(6, 50)), axis=1)
    k = 2
    d = {(i, j): dtw_oracle(series[i].tolist(), series[j].tolist())
         for i in range(6) for j in range(6) if i != j}
    expected = []
    for i in range(6):
        near = sorted((j for j in range(6) if j != i), key=lambda j: (d[i, j], j))[:k]
        s = sorted([i] + near)
        if s not in expected:
            expected.append(s)
    h = dtw_k_hypergraph(series, k)
    assert h.members() == expected
    assert h.n_edges <= 6


def test_dtw_k_rejects_k_at_least_n():
    with pytest.raises(GraphError):
        dtw_k_hypergraph(np.zeros((3, 4)), 3)


# -- correlation --------------------------------------------------------------

def test_correlation_identical_and_opposite():
    x = np.array([0.01, -0.02, 0.03, 0.0, 0.01])
    g = correlation_graph(np.vstack([x, x, -x]), 0.99)
    assert g.edges() == [(0, 1)]
    assert correlation_graph(np.vstack([x, -x]), -1 + 1e-9).edges() == []


def test_correlation_matches_oracle():
    rng = np.random.default_rng(4)
    r = rng.normal(size=(5, 40))
    r[1] += r[0]
    r[3] += 0.8 * r[2]
    corr = np.corrcoef(r)
    expected = [(i, j) for i, j in itertools.combinations(range(5), 2) if corr[i, j] > 0.3]
    assert correlation_graph(r, 0.3).edges() == expected
    assert expected  # the planted pairs exist


def test_correlation_zero_variance_gets_no_edges():
    r = np.vstack([np.ones(10), np.arange(10.0), np.arange(10.0)])
    g = correlation_graph(r, 0.0)
    assert g.edges() == [(1, 2)]


def test_correlation_needs_two_days():
    with pytest.raises(GraphError):
        correlation_graph(np.zeros((3, 1)), 0.1)


# -- conversions ----------------------------------------------------------------

def test_clique_expansion_of_triangle():
    h = HyperGraph(4, np.array([[1, 1, 1, 0]]))
    assert hyper_to_pairwise(h).edges() == [(0, 1), (0, 2), (1, 2)]


@pytest.mark.parametrize("m", range(1, 8))
def test_clique_expansion_edge_count(m):
    inc = np.zeros((1, 8))
    inc[0, :m] = 1
    assert len(hyper_to_pairwise(HyperGraph(8, inc)).edges()) == m * (m - 1) // 2


def test_disjoint_hyperedges_give_block_diagonal():
    h = HyperGraph(5, np.array([[1, 1, 0, 0, 0], [0, 0, 1, 1, 1]]))
    adj = hyper_to_pairwise(h).adjacency
    assert adj[:2, 2:].sum() == 0 and adj[2:, :2].sum() == 0
    assert adj[:2, :2].sum() == 2 and adj[2:, 2:].sum() == 6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_clique_expansion_is_monotone(seed):
    rng = np.random.default_rng(seed)
    inc = (rng.random((4, 6)) < 0.4).astype(float)
    extra = (rng.random((1, 6)) < 0.5).astype(float)
    before = hyper_to_pairwise(HyperGraph(6, inc)).adjacency
    after = hyper_to_pairwise(HyperGraph(6, np.vstack([inc, extra]), check_size=False)).adjacency
    assert np.all(after >= before)
    assert np.array_equal(after, after.T) and np.all(np.diag(after) == 0)


def test_zero_rows_are_not_hyperedges():
    h = HyperGraph(3, np.array([[0, 0, 0], [1, 1, 0], [0, 0, 0]]))
    assert h.members() == [[0, 1]]


def test_too_many_hyperedges_rejected():
    with pytest.raises(GraphError):
        HyperGraph(2, np.ones((3, 2)))


def test_graph_file_roundtrip(tmp_path):
    h = HyperGraph(5, np.array([[1, 1, 0, 0, 1], [0, 0, 1, 1, 0]]))
    write_graph(tmp_path / "g.txt", h)
    assert (tmp_path / "g.txt").read_text() == "5 2\n0 1 4\n2 3\n"
    assert read_graph(tmp_path / "g.txt").members() == h.members()
    p = PairGraph(hyper_to_pairwise(h).adjacency)
    write_graph(tmp_path / "p.txt", p)
    back = hyper_to_pairwise(read_graph(tmp_path / "p.txt"))
    assert np.array_equal(back.adjacency, p.adjacency)


def test_graph_file_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("3 2\n0 1\n")
    with pytest.raises(GraphError, match="declares 2"):
        read_graph(bad)
    bad.write_text("3 1\n0 7\n")
    with pytest.raises(GraphError, match="out of range"):
        read_graph(bad)
