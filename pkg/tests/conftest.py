from __future__ import annotations

import networkx as nx
import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from gridembed.graph import Graph

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("default")


@st.composite
def graphs(draw, max_n: int = 30, max_extra: int = 40):
    """Small random simple graphs (possibly disconnected)."""
    n = draw(st.integers(1, max_n))
    pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=max_extra))
    return Graph.from_edges(n, [(u, v) for u, v in pairs if u != v])


@st.composite
def connected_graphs(draw, max_n: int = 30):
    """Random tree plus a few extra edges."""
    n = draw(st.integers(1, max_n))
    parents = [draw(st.integers(0, v - 1)) for v in range(1, n)]
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=n))
    edges = [(v, p) for v, p in zip(range(1, n), parents)] + [(u, v) for u, v in extra if u != v]
    return Graph.from_edges(n, edges)


def to_nx(g: Graph) -> nx.Graph:
    h = nx.Graph()
    h.add_nodes_from(range(g.vertex_count))
    h.add_edges_from(g.edges().tolist())
    return h


def apsp(g: Graph) -> np.ndarray:
    """All-pairs distances by networkx (-1 = unreachable)."""
    n = g.vertex_count
    d = np.full((n, n), -1, dtype=np.int64)
    for u, row in nx.all_pairs_shortest_path_length(to_nx(g)):
        for v, x in row.items():
            d[u, v] = x
    return d


@pytest.fixture(scope="session")
def grid64():
    from gridembed.generators import generate
    return generate("grid:64")
