import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapnet import ops
from gapnet.graphs import hyper_to_pairwise
from gapnet.realize import (from_prior, mask_attributes, realize, realize_hypergraph,
                            realize_pairwise, threshold_edges)
from gapnet.tensor import Tape, Tensor, backward


def test_threshold_examples():
    attr = np.zeros((2, 2, 2))
    attr[:, 0, 1] = [0.5, 0.7]   # mean 0.6
    attr[:, 1, 0] = [0.5, 0.5]   # mean exactly 0.5
    b = threshold_edges(attr, 0.5)
    assert b.tolist() == [[0, 1], [0, 0]]
    assert not threshold_edges(np.zeros((3, 4, 4)), 0.5).any()


def test_threshold_uses_absolute_mean():
    attr = -0.8 * np.ones((1, 2, 2))
    assert threshold_edges(attr, 0.5).all()


def test_negative_threshold_rejected():
    with pytest.raises(ValueError):
        threshold_edges(np.zeros((1, 2, 2)), -0.1)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_threshold_monotone_in_tau(seed):
    attr = np.random.default_rng(seed).uniform(-1, 1, (2, 6, 6))
    taus = np.linspace(0, 1, 21)
    edges = [threshold_edges(attr, t) for t in taus]
    for lo, hi in zip(edges, edges[1:]):
        assert np.all(hi <= lo)


def test_mask_examples():
    attr = Tensor(np.random.default_rng(0).normal(size=(2, 3, 3)))
    np.testing.assert_array_equal(mask_attributes(attr, np.ones((3, 3))).data, attr.data)
    assert not mask_attributes(attr, np.zeros((3, 3))).data.any()
    single = np.zeros((3, 3))
    single[0, 1] = 1
    m = mask_attributes(attr, single).data
    np.testing.assert_array_equal(m[:, 0, 1], attr.data[:, 0, 1])
    m[:, 0, 1] = 0
    assert not m.any()


def test_mask_shape_mismatch():
    with pytest.raises(ValueError):
        mask_attributes(Tensor(np.zeros((1, 3, 3))), np.ones((2, 2)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), tau=st.floats(0, 1))
def test_remask_idempotent_and_zero_off_structure(seed, tau):
    attr = Tensor(np.random.default_rng(seed).uniform(-1, 1, (2, 5, 5)))
    g = realize_pairwise(attr, tau)
    again = mask_attributes(g.attributes, g.structure)
    assert again.data.tobytes() == g.attributes.data.tobytes()
    assert not g.attributes.data[:, g.structure == 0].any()


def test_symmetric_attributes_give_symmetric_graph():
    a = np.random.default_rng(1).uniform(-1, 1, (3, 6, 6))
    a = a + a.transpose(0, 2, 1)
    s = realize_pairwise(Tensor(a), 0.5).structure
    np.testing.assert_array_equal(s, s.T)


def test_gradient_flows_through_kept_entries_only():
    tape = Tape()
    attr = tape.param("a", np.array([[[0.9, 0.1], [0.2, -0.7]]]))
    g = realize_pairwise(attr, 0.5)
    grads = backward(tape, ops.sum(g.attributes))
    np.testing.assert_array_equal(grads["a"], [[[1.0, 0.0], [0.0, 1.0]]])


def test_dead_rows_are_not_live_hyperedges():
    attr = np.zeros((1, 4, 4))
    attr[0, 0, [0, 2]] = 0.9
    attr[0, 2, [1, 3]] = -0.8
    g = realize_hypergraph(Tensor(attr), 0.5)
    assert g.live_edges().tolist() == [0, 2]
    assert g.to_graph().members() == [[0, 2], [1, 3]]


def test_all_pass_gives_n_full_hyperedges():
    g = realize_hypergraph(Tensor(np.ones((2, 3, 3))), 0.5)
    assert g.live_edges().tolist() == [0, 1, 2]
    assert g.structure.all()


def test_diagonal_dominant_gives_singletons():
    rng = np.random.default_rng(2)
    attr = rng.uniform(-0.3, 0.3, (2, 5, 5)) + 0.8 * np.eye(5)
    diag_mean = np.abs(np.diagonal(attr.mean(axis=0)))
    g = realize_hypergraph(Tensor(attr), float(diag_mean.min()) - 1e-9)
    expected = [[i] for i in range(5)]
    assert g.to_graph().members() == expected


def test_clique_expansion_of_realized_hyperedges():
    g = realize_hypergraph(Tensor(np.ones((1, 4, 4))), 0.5)
    assert len(hyper_to_pairwise(g.to_graph()).edges()) == 6


def test_realize_dispatch_and_priors():
    attr = Tensor(np.ones((1, 2, 2)))
    assert realize(attr, 0.5, "hyper").mode == "hyper"
    with pytest.raises(ValueError):
        realize(attr, 0.5, "bogus")
    assert from_prior(None, 3, "pairwise").structure.shape == (3, 3)
    assert from_prior(None, 3, "hyper").live_edges().size == 0


def test_edge_weights_scale_with_attributes():
    attr = np.zeros((2, 2, 2))
    attr[:, 0, 1] = [0.6, 1.0]
    g = realize_pairwise(Tensor(attr), 0.5)
    np.testing.assert_allclose(g.edge_weights().data, [[0.0, 1.8], [0.0, 0.0]])
