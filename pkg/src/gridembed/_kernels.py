"""Compiled inner loops over CSR adjacency (indptr, indices).

Every kernel takes the CSR arrays explicitly so that callers can pass the
arrays of a power graph or a quotient graph just as easily as the base graph.
Distances are int64 with -1 meaning "not reached".
"""
from __future__ import annotations

import numpy as np
from numba import njit

UNREACHED = -1


@njit(cache=True)
def bfs_bounded(indptr, indices, source, radius, dist):
    """BFS from `source` up to `radius` (negative = unbounded).

    `dist` is caller-owned scratch of length n filled with -1; it is restored
    before returning. Returns (vertices, distances) in BFS order.
    """
    n = indptr.shape[0] - 1
    queue = np.empty(n, dtype=np.int64)
    head = 0
    tail = 0
    queue[tail] = source
    tail += 1
    dist[source] = 0
    while head < tail:
        u = queue[head]
        head += 1
        du = dist[u]
        if radius >= 0 and du >= radius:
            continue
        for k in range(indptr[u], indptr[u + 1]):
            w = indices[k]
            if dist[w] < 0:
                dist[w] = du + 1
                queue[tail] = w
                tail += 1
    verts = queue[:tail].copy()
    ds = np.empty(tail, dtype=np.int64)
    for i in range(tail):
        ds[i] = dist[verts[i]]
        dist[verts[i]] = UNREACHED
    return verts, ds


@njit(cache=True)
def multi_source_bfs(indptr, indices, sources, radius):
    """Distance from the nearest source, -1 where unreachable or beyond radius."""
    n = indptr.shape[0] - 1
    dist = np.full(n, UNREACHED, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    head = 0
    tail = 0
    for s in sources:
        if dist[s] < 0:
            dist[s] = 0
            queue[tail] = s
            tail += 1
    while head < tail:
        u = queue[head]
        head += 1
        du = dist[u]
        if radius >= 0 and du >= radius:
            continue
        for k in range(indptr[u], indptr[u + 1]):
            w = indices[k]
            if dist[w] < 0:
                dist[w] = du + 1
                queue[tail] = w
                tail += 1
    return dist


@njit(cache=True)
def ball_profile(indptr, indices, r_max):
    """gamma[r] = max_v |B(v, r)| for 0 <= r <= r_max."""
    n = indptr.shape[0] - 1
    gamma = np.zeros(r_max + 1, dtype=np.int64)
    dist = np.full(n, UNREACHED, dtype=np.int64)
    counts = np.zeros(r_max + 1, dtype=np.int64)
    for v in range(n):
        verts, ds = bfs_bounded(indptr, indices, v, r_max, dist)
        counts[:] = 0
        for i in range(ds.shape[0]):
            counts[ds[i]] += 1
        acc = 0
        for r in range(r_max + 1):
            acc += counts[r]
            if acc > gamma[r]:
                gamma[r] = acc
    return gamma


@njit(cache=True)
def power_adjacency(indptr, indices, r):
    """CSR of the graph joining vertices at distance 1..r (neighbors sorted)."""
    n = indptr.shape[0] - 1
    dist = np.full(n, UNREACHED, dtype=np.int64)
    new_ptr = np.zeros(n + 1, dtype=np.int64)
    chunks = []
    for v in range(n):
        verts, ds = bfs_bounded(indptr, indices, v, r, dist)
        nb = np.sort(verts[1:])
        chunks.append(nb)
        new_ptr[v + 1] = new_ptr[v] + nb.shape[0]
    new_idx = np.empty(new_ptr[n], dtype=np.int64)
    for v in range(n):
        new_idx[new_ptr[v]:new_ptr[v + 1]] = chunks[v]
    return new_ptr, new_idx


@njit(cache=True)
def greedy_coloring(indptr, indices):
    """Vertices in id order take the smallest color unused by colored neighbors."""
    n = indptr.shape[0] - 1
    color = np.full(n, -1, dtype=np.int64)
    mark = np.full(n + 1, -1, dtype=np.int64)
    for v in range(n):
        for k in range(indptr[v], indptr[v + 1]):
            c = color[indices[k]]
            if c >= 0:
                mark[c] = v
        c = 0
        while mark[c] == v:
            c += 1
        color[v] = c
    return color


@njit(cache=True)
def greedy_coloring_power(indptr, indices, k):
    """Greedy id-order coloring of the distance-<=k power graph, without building it.

    Only vertices with smaller id are colored when v is processed, so the BFS
    from v collects their colors directly.
    """
    n = indptr.shape[0] - 1
    color = np.full(n, -1, dtype=np.int64)
    mark = np.full(n + 1, -1, dtype=np.int64)
    seen = np.full(n, -1, dtype=np.int64)
    depth = np.zeros(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for v in range(n):
        head = 0
        tail = 1
        queue[0] = v
        seen[v] = v
        depth[v] = 0
        while head < tail:
            u = queue[head]
            head += 1
            if u < v:
                mark[color[u]] = v
            if depth[u] >= k:
                continue
            for e in range(indptr[u], indptr[u + 1]):
                w = indices[e]
                if seen[w] != v:
                    seen[w] = v
                    depth[w] = depth[u] + 1
                    queue[tail] = w
                    tail += 1
        c = 0
        while mark[c] == v:
            c += 1
        color[v] = c
    return color


@njit(cache=True)
def carve_sweep(indptr, indices, centers, t):
    """Ball carving: centers in processing order, each claims the unclaimed part of B(x, t[x]).

    Returns owner[v] = generating center of v's cluster, -1 if uncovered.
    """
    n = indptr.shape[0] - 1
    owner = np.full(n, -1, dtype=np.int64)
    seen = np.full(n, -1, dtype=np.int64)
    depth = np.zeros(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for x in centers:
        rad = t[x]
        head = 0
        tail = 1
        queue[0] = x
        seen[x] = x
        depth[x] = 0
        while head < tail:
            u = queue[head]
            head += 1
            if owner[u] < 0:
                owner[u] = x
            if depth[u] >= rad:
                continue
            for e in range(indptr[u], indptr[u + 1]):
                w = indices[e]
                if seen[w] != x:
                    seen[w] = x
                    depth[w] = depth[u] + 1
                    queue[tail] = w
                    tail += 1
    return owner


@njit(cache=True)
def carve_owner_local(indptr, indices, targets, t, color, max_t, owner):
    """Recompute owner[w] for w in targets: the lowest-color center x with d(x, w) <= t[x].

    Writes into `owner` in place. Same-colored centers have disjoint balls,
    so the minimizer is unique.
    """
    n = indptr.shape[0] - 1
    dist = np.full(n, UNREACHED, dtype=np.int64)
    for w in targets:
        verts, ds = bfs_bounded(indptr, indices, w, max_t, dist)
        best = -1
        best_c = -1
        for i in range(verts.shape[0]):
            x = verts[i]
            if ds[i] <= t[x]:
                if best < 0 or color[x] < best_c:
                    best = x
                    best_c = color[x]
        owner[w] = best


@njit(cache=True)
def cut_flags(indptr, indices, label, r, vertices):
    """flags[i] = B(vertices[i], r) meets at least two labels."""
    n = indptr.shape[0] - 1
    dist = np.full(n, UNREACHED, dtype=np.int64)
    out = np.zeros(vertices.shape[0], dtype=np.bool_)
    for i in range(vertices.shape[0]):
        v = vertices[i]
        verts, ds = bfs_bounded(indptr, indices, v, r, dist)
        lv = label[v]
        for j in range(verts.shape[0]):
            if label[verts[j]] != lv:
                out[i] = True
                break
    return out


@njit(cache=True)
def cluster_diameters(indptr, indices, label, n_clusters):
    """Max pairwise dist_G inside each cluster (whole-graph metric); -1 if disconnected in G."""
    n = indptr.shape[0] - 1
    sizes = np.zeros(n_clusters, dtype=np.int64)
    for v in range(n):
        sizes[label[v]] += 1
    diam = np.zeros(n_clusters, dtype=np.int64)
    seen = np.full(n, -1, dtype=np.int64)
    depth = np.zeros(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for v in range(n):
        c = label[v]
        if sizes[c] == 1:
            continue
        remaining = sizes[c] - 1
        head = 0
        tail = 1
        queue[0] = v
        seen[v] = v
        depth[v] = 0
        far = 0
        while head < tail and remaining > 0:
            u = queue[head]
            head += 1
            for e in range(indptr[u], indptr[u + 1]):
                w = indices[e]
                if seen[w] != v:
                    seen[w] = v
                    depth[w] = depth[u] + 1
                    queue[tail] = w
                    tail += 1
                    if label[w] == c:
                        remaining -= 1
                        far = depth[w]
                        if remaining == 0:
                            break
        if remaining > 0:
            diam[c] = -1
        elif diam[c] >= 0 and far > diam[c]:
            diam[c] = far
    return diam


@njit(cache=True)
def padded_counts(indptr, indices, labels, r, vertices):
    """For an (m, n) label matrix, count layers in which B(v, r) lies inside one cluster."""
    m = labels.shape[0]
    n = indptr.shape[0] - 1
    dist = np.full(n, UNREACHED, dtype=np.int64)
    counts = np.zeros(vertices.shape[0], dtype=np.int64)
    for k in range(vertices.shape[0]):
        v = vertices[k]
        verts, ds = bfs_bounded(indptr, indices, v, r, dist)
        for i in range(m):
            lv = labels[i, v]
            ok = True
            for j in range(verts.shape[0]):
                if labels[i, verts[j]] != lv:
                    ok = False
                    break
            if ok:
                counts[k] += 1
    return counts


@njit(cache=True)
def pairs_in_range(indptr, indices, lo, hi, sources, stride, offset):
    """Pairs (u, v), u < v, with lo < dist(u, v) <= hi, u drawn from `sources`.

    stride/offset keep every stride-th candidate per source (stride 1 = all).
    """
    n = indptr.shape[0] - 1
    dist = np.full(n, UNREACHED, dtype=np.int64)
    us = []
    vs = []
    ds_out = []
    for u in sources:
        verts, ds = bfs_bounded(indptr, indices, u, hi, dist)
        cnt = 0
        for i in range(verts.shape[0]):
            v = verts[i]
            if v > u and ds[i] > lo:
                if (cnt + offset) % stride == 0:
                    us.append(u)
                    vs.append(v)
                    ds_out.append(ds[i])
                cnt += 1
    k = len(us)
    U = np.empty(k, dtype=np.int64)
    V = np.empty(k, dtype=np.int64)
    D = np.empty(k, dtype=np.int64)
    for i in range(k):
        U[i] = us[i]
        V[i] = vs[i]
        D[i] = ds_out[i]
    return U, V, D


@njit(cache=True)
def embedding_pair_scan(indptr, indices, coords, one_minus_eps, sources, s):
    """Pair statistics for an embedding, over all v reachable from each source.

    Returns (min_ratio, arg_u, arg_v, max_excess): min_ratio[d] is the minimum
    of ||f(u)-f(v)||_inf / d**(1-eps) over pairs at distance d (attained at
    arg_u[d], arg_v[d]); max_excess is the largest ||f(u)-f(v)||_inf - max(d, s).
    """
    n = indptr.shape[0] - 1
    dim = coords.shape[1]
    dist = np.full(n, UNREACHED, dtype=np.int64)
    min_ratio = np.full(n + 1, np.inf)
    arg_u = np.full(n + 1, -1, dtype=np.int64)
    arg_v = np.full(n + 1, -1, dtype=np.int64)
    max_excess = 0.0
    for u in sources:
        verts, ds = bfs_bounded(indptr, indices, u, -1, dist)
        for i in range(verts.shape[0]):
            v = verts[i]
            if v == u:
                continue
            d = ds[i]
            best = 0
            for j in range(dim):
                x = coords[u, j] - coords[v, j]
                if x < 0:
                    x = -x
                if x > best:
                    best = x
            cap = d if d > s else s
            if best - cap > max_excess:
                max_excess = best - cap
            ratio = best / (d ** one_minus_eps)
            if ratio < min_ratio[d]:
                min_ratio[d] = ratio
                arg_u[d] = u
                arg_v[d] = v
    return min_ratio, arg_u, arg_v, max_excess


@njit(cache=True)
def ball_sizes(indptr, indices, r, vertices):
    n = indptr.shape[0] - 1
    dist = np.full(n, UNREACHED, dtype=np.int64)
    out = np.empty(vertices.shape[0], dtype=np.int64)
    for i in range(vertices.shape[0]):
        verts, ds = bfs_bounded(indptr, indices, vertices[i], r, dist)
        out[i] = verts.shape[0]
    return out


@njit(cache=True)
def eccentricities(indptr, indices, vertices):
    """Largest BFS distance reached from each vertex (within its component)."""
    n = indptr.shape[0] - 1
    dist = np.full(n, UNREACHED, dtype=np.int64)
    out = np.zeros(vertices.shape[0], dtype=np.int64)
    for i in range(vertices.shape[0]):
        verts, ds = bfs_bounded(indptr, indices, vertices[i], -1, dist)
        out[i] = ds[-1]
    return out
