"""Graph families and their random-walk rate generators.

Walk convention: a walker jumps at total rate 1, choosing a uniform neighbor,
so ``q(x, y) = 1/deg(x)`` and the stationary law is proportional to degree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chain import RateGenerator


@dataclass(frozen=True)
class GraphSpec:
    """Parametric description of a graph family instance."""

    family: str
    n: int | None = None
    d: int | None = None
    m: int | None = None
    p: float | None = None
    seed: int = 0

    FAMILIES = ("complete", "cycle", "star", "path", "torus", "random_regular", "erdos_renyi_giant")

    def __post_init__(self):
        if self.family not in self.FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.family in ("complete", "cycle", "star", "path"):
            if self.n is None or self.n < 2:
                raise ValueError(f"{self.family} needs n >= 2")
        elif self.family == "torus":
            if self.d is None or self.d < 1 or self.m is None or self.m < 2:
                raise ValueError("torus needs d >= 1 and m >= 2")
        elif self.family == "random_regular":
            if self.n is None or self.d is None or self.d < 1 or self.n <= self.d:
                raise ValueError("random_regular needs n > d >= 1")
            if (self.n * self.d) % 2 != 0:
                raise ValueError("random_regular needs n*d even")
        elif self.family == "erdos_renyi_giant":
            if self.n is None or self.n < 2 or self.p is None or not 0 < self.p <= 1:
                raise ValueError("erdos_renyi_giant needs n >= 2 and p in (0, 1]")

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


@dataclass(frozen=True)
class Graph:
    """Simple connected undirected graph as adjacency lists."""

    n: int
    adjacency: tuple[tuple[int, ...], ...]

    @property
    def degrees(self):
        return np.array([len(a) for a in self.adjacency])

    @property
    def n_edges(self):
        return int(self.degrees.sum()) // 2

    def edge_list(self):
        return [[x, y] for x in range(self.n) for y in self.adjacency[x] if x < y]

    def to_json_dict(self):
        return {"n": self.n, "edges": self.edge_list()}


def _from_edge_set(n, edges):
    adj = [set() for _ in range(n)]
    for x, y in edges:
        if x == y:
            raise ValueError("self-loop")
        adj[x].add(y)
        adj[y].add(x)
    return Graph(n, tuple(tuple(sorted(a)) for a in adj))


def _connected(n, adj):
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        x = stack.pop()
        for y in adj[x]:
            if not seen[y]:
                seen[y] = True
                stack.append(y)
    return bool(seen.all())


def _torus_vertices(d, m):
    return m**d


def _random_regular_edges(n, d, rng, max_tries=1000):
    # pairing model, rejecting self-loops and multi-edges
    for _ in range(max_tries):
        stubs = np.repeat(np.arange(n), d)
        rng.shuffle(stubs)
        pairs = stubs.reshape(-1, 2)
        edges = set()
        ok = True
        for x, y in pairs:
            x, y = int(x), int(y)
            if x == y or (min(x, y), max(x, y)) in edges:
                ok = False
                break
            edges.add((min(x, y), max(x, y)))
        if ok:
            adj = [set() for _ in range(n)]
            for x, y in edges:
                adj[x].add(y)
                adj[y].add(x)
            if _connected(n, adj):
                return edges
    raise RuntimeError(f"random_regular({n},{d}) failed after {max_tries} pairings")


def build_graph(spec: GraphSpec) -> Graph:
    """Construct the graph for ``spec``; random families are seed-deterministic."""
    f = spec.family
    if f == "complete":
        return _from_edge_set(
            spec.n, [(x, y) for x in range(spec.n) for y in range(x + 1, spec.n)]
        )
    if f == "cycle":
        if spec.n == 2:
            return _from_edge_set(2, [(0, 1)])
        return _from_edge_set(spec.n, [(x, (x + 1) % spec.n) for x in range(spec.n)])
    if f == "path":
        return _from_edge_set(spec.n, [(x, x + 1) for x in range(spec.n - 1)])
    if f == "star":
        return _from_edge_set(spec.n, [(0, y) for y in range(1, spec.n)])
    if f == "torus":
        d, m = spec.d, spec.m
        n = _torus_vertices(d, m)
        shape = (m,) * d
        edges = set()
        for v in range(n):
            coords = np.array(np.unravel_index(v, shape))
            for axis in range(d):
                for step in (1, -1):
                    w = coords.copy()
                    w[axis] = (w[axis] + step) % m
                    u = int(np.ravel_multi_index(tuple(w), shape))
                    if u != v:
                        edges.add((min(v, u), max(v, u)))
        return _from_edge_set(n, edges)
    if f == "random_regular":
        rng = np.random.default_rng(spec.seed)
        return _from_edge_set(spec.n, _random_regular_edges(spec.n, spec.d, rng))
    if f == "erdos_renyi_giant":
        rng = np.random.default_rng(spec.seed)
        n, p = spec.n, spec.p
        upper = rng.random((n, n)) < p
        adj = [set() for _ in range(n)]
        for x in range(n):
            for y in range(x + 1, n):
                if upper[x, y]:
                    adj[x].add(y)
                    adj[y].add(x)
        # largest connected component, relabeled 0..size-1
        seen = np.full(n, -1)
        comps = []
        for s in range(n):
            if seen[s] >= 0:
                continue
            comp = [s]
            seen[s] = len(comps)
            stack = [s]
            while stack:
                x = stack.pop()
                for y in adj[x]:
                    if seen[y] < 0:
                        seen[y] = len(comps)
                        comp.append(y)
                        stack.append(y)
            comps.append(sorted(comp))
        comp = max(comps, key=len)
        if len(comp) < 2:
            raise RuntimeError("giant component is empty (p too small)")
        relabel = {v: i for i, v in enumerate(comp)}
        edges = [
            (relabel[x], relabel[y])
            for x in comp
            for y in adj[x]
            if x < y and y in relabel
        ]
        return _from_edge_set(len(comp), edges)
    raise ValueError(f"unknown family {f!r}")


def walk_generator(graph: Graph) -> RateGenerator:
    """Rate-1 random walk on ``graph``: jump to a uniform neighbor."""
    trips = []
    for x, neigh in enumerate(graph.adjacency):
        if not neigh:
            raise ValueError(f"vertex {x} is isolated")
        r = 1.0 / len(neigh)
        trips.extend((x, y, r) for y in neigh)
    return RateGenerator(graph.n, trips)


def degree_ratio(graph: Graph) -> float:
    """Maximum degree divided by average degree (1 iff regular)."""
    deg = graph.degrees
    return float(deg.max() / deg.mean())


TRANSITIVE_FAMILIES = frozenset({"complete", "cycle", "torus"})


def is_transitive_family(spec: GraphSpec) -> bool:
    """Whether the family is vertex-transitive by construction."""
    return spec.family in TRANSITIVE_FAMILIES
