"""Graph structure shared by the node plants and the edge controllers.

Node ids are 1-based wherever a human sees them (configs, error
messages) and 0-based inside arrays.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "DisconnectedGraphError",
    "Network",
    "build_incidence",
    "edge_inputs",
    "node_inputs",
    "random_connected_graph",
]


class DisconnectedGraphError(ValueError):
    """Raised when some nodes cannot be reached from node 1."""

    def __init__(self, unreachable):
        self.unreachable = tuple(unreachable)
        ids = ", ".join(str(i) for i in self.unreachable)
        super().__init__(f"graph is not connected; nodes unreachable from node 1: {ids}")


@dataclass(frozen=True)
class Network:
    """Connected undirected graph with a fixed edge orientation.

    The first endpoint of each edge is its initial node, the second its
    terminal node.
    """

    node_count: int
    edges: tuple[tuple[int, int], ...]
    tails: np.ndarray = field(init=False, repr=False, compare=False)
    heads: np.ndarray = field(init=False, repr=False, compare=False)
    incidence: np.ndarray = field(init=False, repr=False, compare=False)

    def __init__(self, node_count: int, edges: Sequence[Sequence[int]]):
        edges = tuple((int(a), int(b)) for a, b in edges)
        object.__setattr__(self, "node_count", int(node_count))
        object.__setattr__(self, "edges", edges)
        self._validate()
        tails = np.array([a - 1 for a, _ in edges], dtype=int)
        heads = np.array([b - 1 for _, b in edges], dtype=int)
        tails.flags.writeable = False
        heads.flags.writeable = False
        object.__setattr__(self, "tails", tails)
        object.__setattr__(self, "heads", heads)
        Q = build_incidence(self)
        Q.flags.writeable = False
        object.__setattr__(self, "incidence", Q)

    def _validate(self):
        n = self.node_count
        if n < 1:
            raise ValueError(f"node_count must be positive, got {n}")
        seen = set()
        for k, (a, b) in enumerate(self.edges, start=1):
            if not (1 <= a <= n and 1 <= b <= n):
                raise ValueError(f"edge {k} ({a}, {b}) references a node outside 1..{n}")
            if a == b:
                raise ValueError(f"edge {k} is a self-loop on node {a}")
            key = frozenset((a, b))
            if key in seen:
                raise ValueError(f"edge {k} ({a}, {b}) duplicates an earlier edge")
            seen.add(key)
        reached = _reachable_from_first(n, self.edges)
        if len(reached) < n:
            raise DisconnectedGraphError(sorted(set(range(1, n + 1)) - reached))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def neighbors(self, node: int) -> list[int]:
        """1-based neighbour ids of ``node`` (1-based)."""
        out = []
        for a, b in self.edges:
            if a == node:
                out.append(b)
            elif b == node:
                out.append(a)
        return sorted(out)


def _reachable_from_first(n, edges):
    adj = {i: [] for i in range(1, n + 1)}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    reached = {1}
    queue = deque([1])
    while queue:
        i = queue.popleft()
        for j in adj[i]:
            if j not in reached:
                reached.add(j)
                queue.append(j)
    return reached


def build_incidence(network: Network) -> np.ndarray:
    """N x L incidence matrix: +1 at the initial node, -1 at the terminal node."""
    n, m = network.node_count, network.edge_count
    Q = np.zeros((n, m), dtype=int)
    cols = np.arange(m)
    Q[network.tails, cols] = 1
    Q[network.heads, cols] = -1
    return Q


def _as_channels(values, count, what):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] != count:
        raise ValueError(f"expected {count} {what} vectors, got array of shape {np.shape(values)}")
    return arr


def edge_inputs(node_outputs, incidence) -> np.ndarray:
    """Differences ``y_i - y_j`` across every edge, i.e. ``(Q^T kron I_m) Y``.

    ``node_outputs`` is either a length-N vector (m = 1) or an N x m array;
    the result has the matching shape over edges.
    """
    Q = np.asarray(incidence)
    Y = _as_channels(node_outputs, Q.shape[0], "node output")
    out = Q.T @ Y
    return out[:, 0] if np.ndim(node_outputs) == 1 else out


def node_inputs(edge_outputs, incidence, sign: str = "positive") -> np.ndarray:
    """Aggregate edge outputs at the nodes, ``+-(Q kron I_m) Y_c``.

    ``sign="positive"`` gives the positive interconnection (angle loop),
    ``sign="negative"`` the negative one (voltage loop).
    """
    if sign not in ("positive", "negative"):
        raise ValueError(f"sign must be 'positive' or 'negative', got {sign!r}")
    Q = np.asarray(incidence)
    Yc = _as_channels(edge_outputs, Q.shape[1], "edge output")
    out = Q @ Yc
    if sign == "negative":
        out = -out
    return out[:, 0] if np.ndim(edge_outputs) == 1 else out


def random_connected_graph(n: int, seed: int, extra_edge_prob: float = 0.3) -> Network:
    """Random spanning tree on ``n`` nodes plus independently drawn extra edges.

    Deterministic for a fixed ``seed``.
    """
    if n < 2:
        raise ValueError(f"need at least 2 nodes for a connected graph, got {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n) + 1
    edges = []
    for k in range(1, n):
        parent = order[rng.integers(0, k)]
        edges.append((int(parent), int(order[k])))
    present = {frozenset(e) for e in edges}
    for a in range(1, n + 1):
        for b in range(a + 1, n + 1):
            if frozenset((a, b)) in present:
                continue
            if rng.random() < extra_edge_prob:
                edges.append((a, b) if rng.random() < 0.5 else (b, a))
    if n == 2:
        edges = [(1, 2)]
    return Network(n, edges)
