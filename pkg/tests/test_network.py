import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robustcore.network import (BLOCK_CYCLIC, IID, NetworkSchedule, WeightedGraph, complete_graph,
                                graph_from_edges, metropolis_weights, mix, path_graph, q_connected,
                                strongly_connected, validate)

from oracles import metropolis_by_hand


def consensus_distance(X):
    return np.linalg.norm(X - X.mean(axis=0))


def test_metropolis_path():
    W = path_graph(3).weights
    expected = [[2 / 3, 1 / 3, 0], [1 / 3, 1 / 3, 1 / 3], [0, 1 / 3, 2 / 3]]
    np.testing.assert_allclose(W, expected, atol=1e-15)


def test_metropolis_complete_and_empty():
    np.testing.assert_allclose(complete_graph(3).weights, np.full((3, 3), 1 / 3), atol=1e-15)
    np.testing.assert_array_equal(metropolis_weights(np.zeros((4, 4))).weights, np.eye(4))


def test_metropolis_rejects_bad_adjacency():
    with pytest.raises(ValueError, match="symmetric"):
        metropolis_weights([[0, 1], [0, 0]])
    with pytest.raises(ValueError, match="diagonal"):
        metropolis_weights([[1, 0], [0, 0]])


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 7))
def test_metropolis_matches_hand_formula(seed, n):
    rng = np.random.default_rng(seed)
    adj = np.triu(rng.random((n, n)) < 0.5, 1)
    adj = adj | adj.T
    W = metropolis_weights(adj)
    np.testing.assert_allclose(W.weights, metropolis_by_hand(adj.tolist()), atol=1e-15)
    assert validate(W.weights, W.gamma).ok


def test_validate_examples():
    assert validate(path_graph(4).weights).ok
    verdict = validate([[0.5, 0.5], [0.6, 0.4]])
    assert not verdict.ok and any("column sums" in v for v in verdict.violations)
    assert any("rows [0, 1]" not in v for v in verdict.violations)
    verdict = validate([[0, 1], [1, 0]])
    assert any("diagonal at [0, 1]" in v for v in verdict.violations)
    verdict = validate([[0.95, 0.05], [0.05, 0.95]], gamma=0.1)
    assert any("below gamma" in v for v in verdict.violations)
    assert "square" in str(validate(np.ones((2, 3)) / 3))


def test_weighted_graph_is_validated_and_frozen():
    with pytest.raises(ValueError, match="invalid"):
        WeightedGraph([[0.5, 0.5], [0.6, 0.4]])
    g = path_graph(3)
    with pytest.raises(AttributeError):
        g.weights = np.eye(3)
    with pytest.raises(ValueError):
        g.weights[0, 0] = 1.0


def test_q_connectivity_examples():
    assert q_connected(NetworkSchedule([path_graph(3)], Q=1))
    a = graph_from_edges(3, [(0, 1)])
    b = graph_from_edges(3, [(1, 2)])
    assert q_connected(NetworkSchedule([a, b], Q=2))
    assert not q_connected(NetworkSchedule([a, b], Q=1))
    empty = graph_from_edges(3, [])
    for Q in (1, 2, 5):
        assert not q_connected(NetworkSchedule([empty], Q=Q))


def test_block_cyclic_covers_family_every_window():
    graphs = [graph_from_edges(4, [(i, i + 1)]) for i in range(3)]
    s = NetworkSchedule(graphs, seed=3)
    order = s.prefix(30)
    for k in range(len(order) - 3):
        assert set(order[k:k + 3]) == {0, 1, 2}
    assert s.Q == 3 and q_connected(s)


def test_iid_mode_is_seeded():
    graphs = [path_graph(3), complete_graph(3)]
    a = NetworkSchedule(graphs, mode=IID, seed=5).prefix(50)
    b = NetworkSchedule(graphs, mode=IID, seed=5).prefix(50)
    assert a == b and set(a) == {0, 1}


def test_schedule_json_roundtrip():
    s = NetworkSchedule([graph_from_edges(3, [(0, 1)]), graph_from_edges(3, [(1, 2)])], seed=4, Q=2)
    doc = s.to_json()
    assert doc["mode"] == BLOCK_CYCLIC and doc["graphs"] == [[(0, 1)], [(1, 2)]]
    t = NetworkSchedule.from_json(doc)
    assert t.prefix(10) == s.prefix(10) and t.Q == 2
    with pytest.raises(ValueError, match="graphs"):
        NetworkSchedule.from_json({"mode": "iid"})
    with pytest.raises(ValueError):
        NetworkSchedule([path_graph(3)], mode="random")


def test_strongly_connected_is_directional():
    assert not strongly_connected(np.array([[0, 1], [0, 0]], dtype=bool))
    assert strongly_connected(np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=bool))


def test_mix_examples(rng):
    X = rng.normal(size=(3, 3))
    np.testing.assert_array_equal(mix(WeightedGraph(np.eye(3)), X), X)
    C = np.tile(rng.normal(size=3), (3, 1))
    np.testing.assert_allclose(mix(path_graph(3), C), C, atol=1e-15)
    np.testing.assert_allclose(mix(complete_graph(3), X), np.tile(X.mean(axis=0), (3, 1)), atol=1e-15)
    flat = mix(path_graph(3), X.ravel())
    assert flat.shape == (9,)
    np.testing.assert_allclose(flat, np.kron(path_graph(3).weights, np.eye(3)) @ X.ravel(), atol=1e-14)
    with pytest.raises(ValueError):
        mix(path_graph(3), np.zeros(8))


def random_connected_adjacency(rng, n):
    adj = np.zeros((n, n), dtype=bool)
    order = rng.permutation(n)
    for a, b in zip(order[:-1], order[1:]):
        adj[a, b] = adj[b, a] = True
    extra = np.triu(rng.random((n, n)) < 0.3, 1)
    return adj | extra | extra.T


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 6))
def test_mix_properties(seed, n):
    rng = np.random.default_rng(seed)
    W = metropolis_weights(random_connected_adjacency(rng, n))
    X, Y = rng.normal(size=(2, n, n))
    np.testing.assert_allclose(mix(W, X).mean(axis=0), X.mean(axis=0), atol=1e-12)
    assert np.linalg.norm(mix(W, X) - mix(W, Y)) <= np.linalg.norm(X - Y) + 1e-12
    assert consensus_distance(mix(W, X)) < consensus_distance(X)


def test_fixed_points_of_connected_mixing_are_consensual(rng):
    W = path_graph(4)
    X = rng.normal(size=(4, 4))
    for _ in range(2000):
        X = mix(W, X)
    assert consensus_distance(X) < 1e-10
