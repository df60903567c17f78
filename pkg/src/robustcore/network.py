"""
Communication graphs for the distributed iterations.

Weight matrices must be doubly stochastic with a positive diagonal and a
uniform floor on positive entries. A :class:`NetworkSchedule` orders a
finite family of such graphs over time.
"""

import json
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

STOCHASTIC_TOL = 1e-12

BLOCK_CYCLIC = "block_cyclic"
IID = "iid"


@dataclass
class Verdict:
    """Outcome of a weight-matrix check; ``violations`` is empty on success."""

    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def __str__(self):
        return "pass" if self.ok else "fail: " + "; ".join(self.violations)


def validate(weights, gamma: Optional[float] = None, tol: float = STOCHASTIC_TOL) -> Verdict:
    """Check double stochasticity, positive diagonal and the ``gamma`` floor.

    ``gamma`` defaults to the smallest positive entry, which trivially
    satisfies the floor.
    """
    W = np.asarray(weights, dtype=float)
    verdict = Verdict()
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        verdict.violations.append(f"matrix is not square: shape {W.shape}")
        return verdict
    neg = np.argwhere(W < 0)
    if neg.size:
        verdict.violations.append(f"negative entries at {[tuple(map(int, ij)) for ij in neg]}")
    rows = np.flatnonzero(np.abs(W.sum(axis=1) - 1.0) > tol)
    if rows.size:
        verdict.violations.append(
            f"row sums != 1 at rows {rows.tolist()} (sums {W.sum(axis=1)[rows].round(12).tolist()})")
    cols = np.flatnonzero(np.abs(W.sum(axis=0) - 1.0) > tol)
    if cols.size:
        verdict.violations.append(
            f"column sums != 1 at columns {cols.tolist()} (sums {W.sum(axis=0)[cols].round(12).tolist()})")
    diag = np.flatnonzero(np.diag(W) <= 0)
    if diag.size:
        verdict.violations.append(f"nonpositive diagonal at {diag.tolist()}")
    if gamma is not None:
        low = np.argwhere((W > 0) & (W < gamma))
        if low.size:
            verdict.violations.append(
                f"positive entries below gamma={gamma:g} at {[tuple(map(int, ij)) for ij in low]}")
    return verdict


class WeightedGraph:
    """A doubly stochastic weight matrix; ``weights[i, j]`` is the weight
    agent ``i`` gives to agent ``j``'s proposal."""

    __slots__ = ("weights",)

    def __init__(self, weights):
        W = np.array(weights, dtype=float)
        verdict = validate(W)
        if not verdict.ok:
            raise ValueError(f"invalid weight matrix: {verdict}")
        W.setflags(write=False)
        object.__setattr__(self, "weights", W)

    def __setattr__(self, name, value):
        raise AttributeError("WeightedGraph is immutable")

    def __reduce__(self):
        return (WeightedGraph, (np.array(self.weights),))

    @property
    def n_agents(self) -> int:
        return self.weights.shape[0]

    @property
    def gamma(self) -> float:
        W = self.weights
        return float(W[W > 0].min())

    def adjacency(self) -> np.ndarray:
        """Off-diagonal support as a boolean digraph (``i -> j`` when ``w_ij > 0``)."""
        A = self.weights > 0
        np.fill_diagonal(A, False)
        return A

    def edges(self) -> List[tuple]:
        A = self.adjacency()
        return [(int(i), int(j)) for i, j in np.argwhere(np.triu(A | A.T))]

    def __eq__(self, other):
        return isinstance(other, WeightedGraph) and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(self.weights.tobytes())

    def __repr__(self):
        return f"WeightedGraph(n_agents={self.n_agents}, edges={self.edges()})"


def metropolis_weights(adjacency) -> WeightedGraph:
    """Metropolis-Hastings weights for a symmetric 0/1 adjacency matrix."""
    adj = np.asarray(adjacency)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency must be square")
    adj = adj != 0
    if not np.array_equal(adj, adj.T):
        raise ValueError("adjacency must be symmetric")
    if np.any(np.diag(adj)):
        raise ValueError("adjacency must have a zero diagonal")
    deg = adj.sum(axis=1)
    n = adj.shape[0]
    W = np.zeros((n, n))
    for i, j in np.argwhere(adj):
        W[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
    W[np.diag_indices(n)] = 1.0 - W.sum(axis=1)
    return WeightedGraph(W)


def graph_from_edges(n_agents: int, edges: Sequence) -> WeightedGraph:
    adj = np.zeros((n_agents, n_agents), dtype=bool)
    for i, j in edges:
        if i == j:
            continue
        adj[i, j] = adj[j, i] = True
    return metropolis_weights(adj)


def complete_graph(n: int) -> WeightedGraph:
    return metropolis_weights(~np.eye(n, dtype=bool))


def path_graph(n: int) -> WeightedGraph:
    return graph_from_edges(n, [(i, i + 1) for i in range(n - 1)])


def cycle_graph(n: int) -> WeightedGraph:
    if n < 3:
        return path_graph(n)
    return graph_from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def strongly_connected(adj) -> bool:
    """Breadth-first reachability from every node of a boolean digraph."""
    adj = np.asarray(adj, dtype=bool)
    n = adj.shape[0]
    for s in range(n):
        seen = np.zeros(n, dtype=bool)
        seen[s] = True
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for w in np.flatnonzero(adj[u] & ~seen):
                seen[w] = True
                queue.append(int(w))
        if not seen.all():
            return False
    return True


class NetworkSchedule:
    """A finite family of graphs and the order in which they are used.

    In ``block_cyclic`` mode one seeded permutation of the family is
    repeated forever, so every member appears in every window of
    ``len(family)`` steps. ``iid`` mode draws each step uniformly; it only
    covers the family with high probability.
    """

    def __init__(self, graphs: Sequence[WeightedGraph], mode: str = BLOCK_CYCLIC,
                 seed: int = 0, Q: Optional[int] = None):
        if not graphs:
            raise ValueError("a schedule needs at least one graph")
        n = graphs[0].n_agents
        if any(g.n_agents != n for g in graphs):
            raise ValueError("all graphs must have the same number of agents")
        if mode not in (BLOCK_CYCLIC, IID):
            raise ValueError(f"unknown schedule mode {mode!r}")
        self.graphs = tuple(graphs)
        self.mode = mode
        self.seed = int(seed)
        self.Q = len(self.graphs) if Q is None else int(Q)
        if self.Q < 1:
            raise ValueError("Q must be at least 1")
        rng = np.random.default_rng(self.seed)
        self._perm = rng.permutation(len(self.graphs))
        self._iid_seed = self.seed

    @property
    def n_agents(self) -> int:
        return self.graphs[0].n_agents

    @property
    def gamma(self) -> float:
        return min(g.gamma for g in self.graphs)

    @property
    def period(self) -> int:
        return len(self.graphs)

    def indices(self):
        """Infinite iterator over family indices."""
        if self.mode == BLOCK_CYCLIC:
            k = 0
            while True:
                yield int(self._perm[k % self.period])
                k += 1
        else:
            rng = np.random.default_rng(self._iid_seed)
            while True:
                yield int(rng.integers(self.period))

    def __iter__(self):
        return (self.graphs[i] for i in self.indices())

    def prefix(self, length: int) -> List[int]:
        it = self.indices()
        return [next(it) for _ in range(length)]

    def to_json(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "graphs": [g.edges() for g in self.graphs],
            "mode": self.mode,
            "seed": self.seed,
            "Q": self.Q,
        }

    @classmethod
    def from_json(cls, doc: dict, n_agents: Optional[int] = None) -> "NetworkSchedule":
        try:
            edge_lists = doc["graphs"]
        except KeyError:
            raise ValueError("network schedule is missing field 'graphs'") from None
        n = doc.get("n_agents", n_agents)
        if n is None:
            n = 1 + max((max(e) for el in edge_lists for e in el), default=0)
        graphs = [graph_from_edges(int(n), [tuple(e) for e in el]) for el in edge_lists]
        return cls(graphs, mode=doc.get("mode", BLOCK_CYCLIC), seed=int(doc.get("seed", 0)),
                   Q=doc.get("Q"))

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    def reseeded(self, seed: int) -> "NetworkSchedule":
        return NetworkSchedule(self.graphs, self.mode, seed, self.Q)


def q_connected(schedule: NetworkSchedule, horizon: Optional[int] = None) -> bool:
    """Whether every ``Q``-window of the schedule has a strongly connected union.

    Block-cyclic schedules are periodic, so the windows starting within one
    period (with wrap-around) are exhaustive. For ``iid`` schedules the
    windows of the first ``horizon`` steps (default ``50 * period``) are
    checked.
    """
    Q = schedule.Q
    if schedule.mode == BLOCK_CYCLIC:
        order = schedule.prefix(schedule.period + Q)
        starts = range(schedule.period)
    else:
        horizon = horizon or 50 * schedule.period
        order = schedule.prefix(horizon + Q)
        starts = range(horizon)
    adj = [g.adjacency() for g in schedule.graphs]
    for s in starts:
        union = np.zeros_like(adj[0])
        for idx in order[s:s + Q]:
            union |= adj[idx]
        if not strongly_connected(union):
            return False
    return True


def mix(graph: WeightedGraph, x) -> np.ndarray:
    """Weighted neighbour averaging of a stacked profile.

    ``x`` has one row per agent; row ``i`` of the result is
    ``sum_j w_ij x_j``. Flat ``N*N`` vectors are accepted and returned flat.
    """
    W = graph.weights
    x = np.asarray(x, dtype=float)
    n = W.shape[0]
    flat = x.ndim == 1
    if x.size != n * n or x.ndim not in (1, 2):
        raise ValueError(f"profile of shape {x.shape} does not match {n} agents")
    X = x.reshape(n, n)
    out = W @ X
    return out.ravel() if flat else out
