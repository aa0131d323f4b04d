"""Undirected graphs used as miner (network) graphs and chain (base) graphs.

Vertices are always ``0..n-1``. Graphs are immutable once built, so a single
instance can be shared by every trajectory in an ensemble.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np


class GraphError(ValueError):
    """Raised for invalid generator parameters or malformed graphs."""


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class Graph:
    n: int
    adjacency: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.adjacency) != self.n:
            raise GraphError(f"adjacency has {len(self.adjacency)} rows, expected {self.n}")
        for v, nbrs in enumerate(self.adjacency):
            if list(nbrs) != sorted(set(nbrs)):
                raise GraphError(f"neighbors of {v} must be sorted and unique")
            for w in nbrs:
                if not 0 <= w < self.n:
                    raise GraphError(f"vertex {w} out of range")
                if w == v:
                    raise GraphError(f"self-loop at {v}")
                # membership check on a sorted tuple is fine at these sizes
                if v not in self.adjacency[w]:
                    raise GraphError(f"edge ({v}, {w}) is not symmetric")

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "Graph":
        nbrs: list[set[int]] = [set() for _ in range(n)]
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise GraphError(f"self-loop at {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise GraphError(f"edge ({u}, {v}) out of range for n={n}")
            nbrs[u].add(v)
            nbrs[v].add(u)
        return cls(n, tuple(tuple(sorted(s)) for s in nbrs))

    def neighbors(self, v: int) -> tuple[int, ...]:
        return self.adjacency[v]

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def has_edge(self, u: int, v: int) -> bool:
        return v in self.adjacency[u]

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u in range(self.n) for v in self.adjacency[u] if u < v]

    @property
    def num_edges(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2

    @property
    def max_degree(self) -> int:
        return max((len(a) for a in self.adjacency), default=0)

    def bfs_distances(self, source: int) -> list[int]:
        """Hop distances from ``source``; -1 marks unreachable vertices."""
        dist = [-1] * self.n
        dist[source] = 0
        queue = deque([source])
        while queue:
            v = queue.popleft()
            for w in self.adjacency[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
        return dist

    def eccentricity(self, v: int) -> int:
        dist = self.bfs_distances(v)
        if min(dist) < 0:
            raise GraphError("eccentricity undefined on a disconnected graph")
        return max(dist)

    def diameter(self) -> int:
        return max(self.eccentricity(v) for v in range(self.n))

    def girth(self) -> float:
        """Length of the shortest cycle, ``inf`` for forests."""
        best = float("inf")
        for s in range(self.n):
            dist = [-1] * self.n
            parent = [-1] * self.n
            dist[s] = 0
            queue = deque([s])
            while queue:
                v = queue.popleft()
                for w in self.adjacency[v]:
                    if dist[w] < 0:
                        dist[w] = dist[v] + 1
                        parent[w] = v
                        queue.append(w)
                    elif parent[v] != w:
                        best = min(best, dist[v] + dist[w] + 1)
        return best


def is_connected(g: Graph) -> bool:
    if g.n == 0:
        return False
    return min(g.bfs_distances(0)) >= 0


def gen_complete(n: int) -> Graph:
    if n < 1:
        raise GraphError("complete graph needs n >= 1")
    return Graph(n, tuple(tuple(w for w in range(n) if w != v) for v in range(n)))


def gen_path(n: int) -> Graph:
    if n < 1:
        raise GraphError("path graph needs n >= 1")
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def gen_petersen() -> Graph:
    outer = [(i, (i + 1) % 5) for i in range(5)]
    spokes = [(i, i + 5) for i in range(5)]
    inner = [(5 + i, 5 + (i + 2) % 5) for i in range(5)]
    return Graph.from_edges(10, outer + spokes + inner)


def gen_hoffman_singleton() -> Graph:
    """Hoffman-Singleton graph from five pentagons and five pentagrams.

    Pentagon ``P_h`` vertex ``j`` is ``5h + j``; pentagram ``Q_i`` vertex ``j``
    is ``25 + 5i + j``; ``P_h[j] ~ Q_i[h*i + j mod 5]``.
    """
    edges = []
    for h in range(5):
        for j in range(5):
            edges.append((5 * h + j, 5 * h + (j + 1) % 5))
            edges.append((25 + 5 * h + j, 25 + 5 * h + (j + 2) % 5))
    for h in range(5):
        for i in range(5):
            for j in range(5):
                edges.append((5 * h + j, 25 + 5 * i + (h * i + j) % 5))
    g = Graph.from_edges(50, edges)
    if g.num_edges != 175 or any(g.degree(v) != 7 for v in range(50)):
        raise GraphError("Hoffman-Singleton construction is not 7-regular with 175 edges")
    if g.diameter() != 2:
        raise GraphError("Hoffman-Singleton construction does not have diameter 2")
    return g


def gen_barabasi(n: int, m: int, rng=None) -> Graph:
    """Preferential attachment grown from an ``m``-clique.

    Each new vertex links to ``m`` distinct existing vertices chosen with
    probability proportional to their current degree.
    """
    if not 1 <= m < n:
        raise GraphError(f"need 1 <= m < n, got m={m}, n={n}")
    rng = _as_rng(rng)
    edges = [(u, v) for u in range(m) for v in range(u + 1, m)]
    # each vertex appears once per incident edge
    endpoints = [x for e in edges for x in e]
    for v in range(m, n):
        if v == m:
            targets = set(range(m))
        else:
            targets = set()
            while len(targets) < m:
                targets.add(endpoints[int(rng.integers(len(endpoints)))])
        for t in sorted(targets):
            edges.append((t, v))
            endpoints.extend((t, v))
    return Graph.from_edges(n, edges)


def gen_line_er(n: int, p: float, rng=None) -> Graph:
    """Erdos-Renyi graph that always contains the path edges ``(i, i+1)``."""
    if n < 2:
        raise GraphError("line-ER graph needs n >= 2")
    if not 0.0 <= p <= 1.0:
        raise GraphError(f"p must lie in [0, 1], got {p}")
    rng = _as_rng(rng)
    iu, ju = np.triu_indices(n, k=1)
    coin = rng.random(iu.size) < p
    keep = coin | (ju == iu + 1)
    return Graph.from_edges(n, zip(iu[keep].tolist(), ju[keep].tolist()))


def read_edgelist(path: str | Path) -> Graph:
    """Parse ``"n m"`` followed by ``m`` lines of ``"u v"``."""
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise GraphError(f"{path}: empty edge-list file")
    try:
        n, m = int(lines[0][0]), int(lines[0][1])
        edges = [(int(a), int(b)) for a, b in lines[1:]]
    except (ValueError, IndexError) as exc:
        raise GraphError(f"{path}: malformed edge list ({exc})") from None
    if len(edges) != m:
        raise GraphError(f"{path}: header announces {m} edges, found {len(edges)}")
    return Graph.from_edges(n, edges)


def write_edgelist(g: Graph, path: str | Path) -> None:
    edges = g.edges()
    body = [f"{g.n} {len(edges)}"] + [f"{u} {v}" for u, v in edges]
    Path(path).write_text("\n".join(body) + "\n")


def build_graph(kind: str, rng=None, **params) -> Graph:
    """Dispatch on a graph-kind name as used in scenario configs."""
    if kind == "complete":
        return gen_complete(int(params["n"]))
    if kind == "path":
        return gen_path(int(params["n"]))
    if kind == "petersen":
        return gen_petersen()
    if kind == "hoffman_singleton":
        return gen_hoffman_singleton()
    if kind == "barabasi":
        return gen_barabasi(int(params["n"]), int(params["m"]), rng)
    if kind == "line_er":
        return gen_line_er(int(params["n"]), float(params["p"]), rng)
    if kind == "file":
        return read_edgelist(params["path"])
    raise GraphError(f"unknown graph kind {kind!r}")
