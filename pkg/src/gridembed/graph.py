"""Finite simple graphs, ball queries, growth profiling, power and quotient graphs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K


class GraphFormatError(ValueError):
    """Malformed edge-list input."""


class GraphValidationError(ValueError):
    """Input violates simplicity (loops) or references out-of-range vertices."""


class Graph:
    """Immutable undirected simple graph on vertices 0..n-1.

    Adjacency is stored as CSR arrays; neighbor lists are strictly sorted.
    """

    __slots__ = ("indptr", "indices", "__dict__")

    def __init__(self, indptr: np.ndarray, indices: np.ndarray):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "Graph":
        pairs = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise GraphValidationError(f"loop at vertex {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise GraphValidationError(f"edge ({u}, {v}) out of range for n={n}")
            pairs.add((u, v) if u < v else (v, u))
        return cls._from_pair_array(n, np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2))

    @classmethod
    def _from_pair_array(cls, n: int, pairs: np.ndarray) -> "Graph":
        if len(pairs) == 0:
            return cls(np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))
        src = np.concatenate([pairs[:, 0], pairs[:, 1]])
        dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return cls(np.cumsum(indptr), dst)

    @classmethod
    def from_adjacency(cls, adjacency: Sequence[Iterable[int]]) -> "Graph":
        n = len(adjacency)
        return cls.from_edges(n, ((u, v) for u, nb in enumerate(adjacency) for v in nb))

    @property
    def vertex_count(self) -> int:
        return len(self.indptr) - 1

    def __len__(self) -> int:
        return self.vertex_count

    @property
    def edge_count(self) -> int:
        return len(self.indices) // 2

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    @cached_property
    def adjacency(self) -> list[list[int]]:
        return [self.neighbors(v).tolist() for v in range(self.vertex_count)]

    def edges(self) -> np.ndarray:
        """(E, 2) array of edges with u < v, sorted."""
        deg = np.diff(self.indptr)
        src = np.repeat(np.arange(self.vertex_count, dtype=np.int64), deg)
        keep = src < self.indices
        return np.stack([src[keep], self.indices[keep]], axis=1)

    @cached_property
    def max_degree(self) -> int:
        return int(np.diff(self.indptr).max()) if self.vertex_count else 0

    @cached_property
    def component_labels(self) -> np.ndarray:
        """Component index per vertex; components numbered by increasing min vertex id."""
        labels = np.full(self.vertex_count, -1, dtype=np.int64)
        c = 0
        for v in range(self.vertex_count):
            if labels[v] < 0:
                d = K.multi_source_bfs(self.indptr, self.indices, np.array([v], dtype=np.int64), -1)
                labels[d >= 0] = c
                c += 1
        labels.setflags(write=False)
        return labels

    @property
    def component_count(self) -> int:
        return int(self.component_labels.max()) + 1 if self.vertex_count else 0

    def components(self) -> list[np.ndarray]:
        labels = self.component_labels
        return [np.flatnonzero(labels == c) for c in range(self.component_count)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return np.array_equal(self.indptr, other.indptr) and np.array_equal(self.indices, other.indices)

    def __hash__(self) -> int:
        return hash((self.indptr.tobytes(), self.indices.tobytes()))

    def __repr__(self) -> str:
        return f"Graph(n={self.vertex_count}, m={self.edge_count})"


def load_graph(text: str) -> Graph:
    """Parse the edge-list format: optional "n <count>" header, "u v" lines, '#' comments."""
    declared = None
    pairs = []
    seen_body = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "n":
            if seen_body or declared is not None or len(parts) != 2:
                raise GraphFormatError(f"line {lineno}: misplaced or malformed header {raw!r}")
            try:
                declared = int(parts[1])
            except ValueError:
                raise GraphFormatError(f"line {lineno}: bad vertex count {parts[1]!r}") from None
            if declared < 0:
                raise GraphFormatError(f"line {lineno}: negative vertex count")
            continue
        if len(parts) != 2:
            raise GraphFormatError(f"line {lineno}: expected 'u v', got {raw!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFormatError(f"line {lineno}: non-integer vertex id in {raw!r}") from None
        if u < 0 or v < 0:
            raise GraphFormatError(f"line {lineno}: negative vertex id")
        if u == v:
            raise GraphValidationError(f"line {lineno}: loop edge at vertex {u}")
        seen_body = True
        pairs.append((u, v))
    n = 1 + max((max(p) for p in pairs), default=-1)
    if declared is not None:
        if declared < n:
            raise GraphValidationError(f"header declares {declared} vertices but ids reach {n - 1}")
        n = declared
    return Graph.from_edges(n, pairs)


def dump_graph(g: Graph) -> str:
    lines = [f"n {g.vertex_count}"]
    lines += [f"{u} {v}" for u, v in g.edges().tolist()]
    return "\n".join(lines) + "\n"


def _check_vertex(g: Graph, v: int) -> None:
    if not 0 <= v < g.vertex_count:
        raise IndexError(f"vertex {v} out of range for graph with {g.vertex_count} vertices")


def bounded_bfs(g: Graph, source: int, radius: int | None = None) -> dict[int, int]:
    """Exact distances from `source` to every vertex within `radius` (None = unbounded)."""
    _check_vertex(g, source)
    verts, ds = bfs_arrays(g, source, radius)
    return dict(zip(verts.tolist(), ds.tolist()))


def bfs_arrays(g: Graph, source: int, radius: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    scratch = np.full(g.vertex_count, -1, dtype=np.int64)
    return K.bfs_bounded(g.indptr, g.indices, int(source), -1 if radius is None else int(radius), scratch)


def ball(g: Graph, v: int, r: int) -> set[int]:
    if r < 0:
        raise ValueError("radius must be nonnegative")
    _check_vertex(g, v)
    return set(bfs_arrays(g, v, r)[0].tolist())


def set_distances(g: Graph, sources: Iterable[int], radius: int | None = None) -> np.ndarray:
    """dist_G(v, S) for all v (-1 = infinite); empty S gives all -1."""
    src = np.fromiter(sources, dtype=np.int64)
    return K.multi_source_bfs(g.indptr, g.indices, src, -1 if radius is None else int(radius))


def set_ball(g: Graph, vertices: Iterable[int], r: int) -> np.ndarray:
    """B_G(S, r) as a sorted vertex array."""
    return np.flatnonzero(set_distances(g, vertices, r) >= 0)


def boundary(g: Graph, members: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Vertices of S with a neighbor outside S."""
    if mask is None:
        mask = np.zeros(g.vertex_count, dtype=bool)
        mask[members] = True
    out = [v for v in members.tolist() if not mask[g.neighbors(v)].all()]
    return np.array(out, dtype=np.int64)


@dataclass
class GrowthProfile:
    gamma: dict[int, int]
    rho: dict[int, float]
    b: float | None = None
    r0: float | None = None

    @property
    def er_bound(self) -> float:
        return max(self.rho.values(), default=0.0)

    @property
    def r_max(self) -> int:
        return max(self.gamma)

    def to_json(self) -> dict:
        return {
            "gamma": {str(r): g for r, g in self.gamma.items()},
            "rho": {str(r): x for r, x in self.rho.items()},
            "er_bound": self.er_bound,
            "b": self.b,
            "r0": self.r0,
        }


def growth_profile(g: Graph, r_max: int) -> GrowthProfile:
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    if g.vertex_count == 0:
        raise ValueError("growth function is undefined on the empty graph")
    gamma = K.ball_profile(g.indptr, g.indices, int(r_max))
    gam = {r: int(gamma[r]) for r in range(r_max + 1)}
    rho = {r: math.log(gam[r]) / math.log(r + 1) for r in range(1, r_max + 1)}
    return GrowthProfile(gam, rho)


def check_b_r0(profile: GrowthProfile, b: float, r0: float) -> tuple[bool, int | None]:
    """Is gamma(r) <= r**b for every sampled integer r >= r0? Returns (ok, first violating r)."""
    for r in sorted(profile.gamma):
        if r >= r0 and profile.gamma[r] > r ** b:
            return False, r
    return True, None


def power_graph(g: Graph, r: int) -> Graph:
    if r < 1:
        raise ValueError("power graph needs r >= 1")
    if r == 1:
        return g
    indptr, indices = K.power_adjacency(g.indptr, g.indices, int(r))
    return Graph(indptr, indices)


def greedy_proper_coloring(g: Graph) -> np.ndarray:
    """Id-order greedy coloring; uses at most max_degree + 1 colors."""
    return K.greedy_coloring(g.indptr, g.indices)


def greedy_power_coloring(g: Graph, r: int) -> np.ndarray:
    """Same result as greedy_proper_coloring(power_graph(g, r)) without materializing the power graph."""
    if r < 1:
        raise ValueError("power graph needs r >= 1")
    return K.greedy_coloring_power(g.indptr, g.indices, int(r))


class InvalidPartition(ValueError):
    pass


@dataclass(eq=False)
class Partition:
    """Vertex -> cluster assignment with clusters numbered 0..k-1 by least member."""

    cluster_of: np.ndarray
    clusters: list[np.ndarray] = field(repr=False)

    @classmethod
    def from_labels(cls, labels: Sequence[int] | np.ndarray) -> "Partition":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and labels.min() < 0:
            raise InvalidPartition("some vertex has no cluster")
        # renumber by first occurrence so the representation is canonical
        _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
        rank = np.empty(len(first), dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(len(first))
        canon = rank[inv.reshape(-1)]
        order = np.argsort(canon, kind="stable")
        bounds = np.searchsorted(canon[order], np.arange(len(first) + 1))
        clusters = [order[bounds[i]:bounds[i + 1]] for i in range(len(first))]
        canon.setflags(write=False)
        return cls(canon, clusters)

    @classmethod
    def from_clusters(cls, n: int, clusters: Iterable[Iterable[int]]) -> "Partition":
        labels = np.full(n, -1, dtype=np.int64)
        for i, members in enumerate(clusters):
            members = np.fromiter(members, dtype=np.int64)
            if members.size == 0:
                raise InvalidPartition("empty cluster")
            if (labels[members] >= 0).any():
                raise InvalidPartition("clusters overlap")
            labels[members] = i
        if (labels < 0).any():
            raise InvalidPartition(f"clusters do not cover vertex {int(np.flatnonzero(labels < 0)[0])}")
        return cls.from_labels(labels)

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls.from_labels(np.arange(n))

    @property
    def n(self) -> int:
        return len(self.cluster_of)

    def __len__(self) -> int:
        return len(self.clusters)

    def as_sets(self) -> set[frozenset[int]]:
        return {frozenset(c.tolist()) for c in self.clusters}

    def diameters(self, g: Graph) -> np.ndarray:
        """Diameter of each cluster in the metric of g (-1 = infinite)."""
        cached = self.__dict__.setdefault("_diam_cache", {})
        key = id(g)
        if key not in cached:
            cached[key] = (g, K.cluster_diameters(g.indptr, g.indices, self.cluster_of, len(self.clusters)))
        return cached[key][1]

    def max_diameter(self, g: Graph) -> float:
        d = self.diameters(g)
        if len(d) == 0:
            return 0
        return math.inf if (d < 0).any() else int(d.max())

    def refines(self, coarser: "Partition") -> bool:
        """self ⪯ coarser: every cluster of self lies in one cluster of coarser."""
        return all(len(np.unique(coarser.cluster_of[c])) == 1 for c in self.clusters)

    def validate(self) -> None:
        seen = np.zeros(self.n, dtype=np.int64)
        for i, c in enumerate(self.clusters):
            if len(c) == 0:
                raise InvalidPartition(f"cluster {i} is empty")
            seen[c] += 1
            if (self.cluster_of[c] != i).any():
                raise InvalidPartition(f"cluster {i} disagrees with cluster_of")
        if (seen != 1).any():
            raise InvalidPartition("clusters are not a partition of the vertex set")

    def to_json(self) -> list[list[int]]:
        return [c.tolist() for c in self.clusters]


def quotient_graph(g: Graph, p: Partition) -> tuple[Graph, np.ndarray]:
    """G/P with one vertex per cluster; returns the graph and the cluster-id -> quotient-vertex map."""
    e = g.edges()
    k = len(p.clusters)
    if len(e) == 0:
        return Graph.from_edges(k, []), np.arange(k)
    a = p.cluster_of[e[:, 0]]
    b = p.cluster_of[e[:, 1]]
    cross = a != b
    lo = np.minimum(a[cross], b[cross])
    hi = np.maximum(a[cross], b[cross])
    pairs = np.unique(np.stack([lo, hi], axis=1), axis=0) if cross.any() else np.zeros((0, 2), dtype=np.int64)
    return Graph._from_pair_array(k, pairs), np.arange(k)
