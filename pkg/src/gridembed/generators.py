"""Deterministic graph families used by the CLI and the acceptance runs."""
from __future__ import annotations

import numpy as np

from .graph import Graph
from .rng import uniforms


def path(n: int) -> Graph:
    return Graph._from_pair_array(n, np.stack([np.arange(n - 1), np.arange(1, n)], axis=1) if n > 1 else np.zeros((0, 2), dtype=np.int64))


def cycle(n: int) -> Graph:
    if n < 3:
        raise ValueError("cycle needs at least 3 vertices")
    i = np.arange(n)
    pairs = np.stack([i, (i + 1) % n], axis=1)
    return Graph._from_pair_array(n, np.sort(pairs, axis=1))


def _grid(k: int, diagonal: bool) -> Graph:
    idx = np.arange(k * k).reshape(k, k)
    blocks = [
        np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1),
        np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1),
    ]
    if diagonal:
        blocks.append(np.stack([idx[:-1, :-1].ravel(), idx[1:, 1:].ravel()], axis=1))
        blocks.append(np.stack([idx[:-1, 1:].ravel(), idx[1:, :-1].ravel()], axis=1))
    pairs = np.sort(np.concatenate(blocks), axis=1)
    return Graph._from_pair_array(k * k, pairs)


def grid(k: int) -> Graph:
    """k x k patch of the Z^2 grid with l1 adjacency; vertex (i, j) has id i*k + j."""
    return _grid(k, diagonal=False)


def grid_inf(k: int) -> Graph:
    """k x k patch of the Z^2 grid with l-infinity adjacency (diagonals included)."""
    return _grid(k, diagonal=True)


def tree(depth: int, branching: int) -> Graph:
    """Complete rooted tree, root 0, children in BFS order."""
    edges = []
    level = [0]
    nxt = 1
    for _ in range(depth):
        new = []
        for parent in level:
            for _ in range(branching):
                edges.append((parent, nxt))
                new.append(nxt)
                nxt += 1
        level = new
    return Graph._from_pair_array(nxt, np.array(edges, dtype=np.int64).reshape(-1, 2))


def er_bounded(n: int, d: int, seed: int) -> Graph:
    """Erdos-Renyi-style graph with average degree about d, capped at max degree d.

    Candidate pairs are scanned in a seeded order and kept while both
    endpoints still have spare degree.
    """
    if n < 2:
        return Graph.from_edges(max(n, 0), [])
    iu, ju = np.triu_indices(n, k=1)
    keys = uniforms(seed, 0xE5, np.arange(len(iu)))
    prob = min(1.0, d / max(n - 1, 1))
    deg = np.zeros(n, dtype=np.int64)
    edges = []
    for pos in np.argsort(keys, kind="stable"):
        if keys[pos] >= prob:
            break
        u, v = int(iu[pos]), int(ju[pos])
        if deg[u] < d and deg[v] < d:
            edges.append((u, v))
            deg[u] += 1
            deg[v] += 1
    return Graph.from_edges(n, edges)


def generate(family: str) -> Graph:
    """Build a graph from a family string such as "grid:64" or "tree:6,2"."""
    try:
        name, _, arg = family.partition(":")
        args = [int(a) for a in arg.split(",")] if arg else []
    except ValueError:
        raise ValueError(f"malformed family string {family!r}") from None
    makers = {
        "path": (path, 1),
        "cycle": (cycle, 1),
        "grid": (grid, 1),
        "gridinf": (grid_inf, 1),
        "tree": (tree, 2),
        "er-bounded": (er_bounded, 3),
    }
    if name not in makers:
        raise ValueError(f"unknown graph family {name!r}")
    fn, arity = makers[name]
    if len(args) != arity or any(a < 0 for a in args):
        raise ValueError(f"family {name!r} takes {arity} nonnegative integer argument(s), got {arg!r}")
    if name in ("path", "grid", "gridinf") and args[0] < 1:
        raise ValueError(f"family {name!r} needs a positive size")
    return fn(*args)
