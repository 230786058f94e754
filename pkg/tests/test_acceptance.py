"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line with its measurements."""
from __future__ import annotations

import glob
import math
import os
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from gridembed.carving import (CarvingInput, TGeoParams, auto_M, carve, cut_rate_experiment, make_color_classes,
                               tgeo_from_uniform, tgeo_pmf, tgeo_tail)
from gridembed.decomposition import (ConstructionFailed, Cover, Decomposition, DecompositionParams, build_padded,
                                     cover_from_padded, padded_from_cover, strengthen, verify_padded)
from gridembed.embedding import (Cocycle, EmbeddingSchedule, coarse_embed, desk_preset, digits_needed,
                                 graph_diameter, injective_embed, nested_schedule, realize_cocycle,
                                 verify_embedding)
from gridembed.generators import generate
from gridembed.graph import load_graph
from gridembed.rng import Stream

CORPUS = os.path.join(os.path.dirname(__file__), "corpus")
RESULTS: dict[int, tuple[bool, str]] = {}


def report(capsys, k: int, ok: bool, detail: str, elapsed: float, limit: float):
    ok_time = elapsed < limit
    line = (f"{'PASS' if ok and ok_time else 'FAIL'} criterion {k}: {detail} "
            f"[{elapsed:.1f}s / limit {limit:.0f}s{'' if ok_time else ', over time'}]")
    RESULTS[k] = (ok and ok_time, line)
    with capsys.disabled():
        print("\n" + line)
    assert ok and ok_time, line


# independent oracles --------------------------------------------------------

def distance_rows(g, rows):
    adj = csr_matrix((np.ones(len(g.indices)), g.indices, g.indptr), shape=(g.vertex_count,) * 2)
    d = shortest_path(adj, method="D", unweighted=True, indices=rows)
    return np.where(np.isinf(d), -1, d).astype(np.int64)


def scan_pairs(g, pos, chunk=256):
    """Yield (d, sup-norm differences) for row chunks of all ordered pairs."""
    n = g.vertex_count
    for a in range(0, n, chunk):
        rows = np.arange(a, min(n, a + chunk))
        d = distance_rows(g, rows)
        diff = np.abs(pos[rows][:, None, :] - pos[None, :, :]).max(axis=2) if pos.shape[1] else np.zeros_like(d)
        yield rows, d, diff


def brute_padded_counts(g, layers, r):
    n = g.vertex_count
    out = np.zeros(n, dtype=np.int64)
    for rows in np.array_split(np.arange(n), max(1, n // 256)):
        d = distance_rows(g, rows)
        for p in layers:
            lab = p.cluster_of
            inside = (d >= 0) & (d <= r)
            same = np.where(inside, lab[None, :] == lab[rows][:, None], True).all(axis=1)
            out[rows] += same
    return out


def brute_max_diameter(g, layers):
    n = g.vertex_count
    worst = 0
    for rows in np.array_split(np.arange(n), max(1, n // 256)):
        d = distance_rows(g, rows)
        for p in layers:
            lab = p.cluster_of
            same = lab[rows][:, None] == lab[None, :]
            if (same & (d < 0)).any():
                return math.inf
            worst = max(worst, int(np.where(same, d, 0).max()))
    return worst


def is_partition(p, n):
    allv = np.sort(np.concatenate(p.clusters)) if p.clusters else np.zeros(0, dtype=np.int64)
    return len(allv) == n and np.array_equal(allv, np.arange(n))


# 1 ---------------------------------------------------------------------------

def test_criterion_1_tgeo(capsys):
    t0 = time.perf_counter()
    worst_sum = worst_tail = 0.0
    worst_z = 0.0
    for p in (Fraction(1, 2), Fraction(1, 5), Fraction(1, 50)):
        for M in (0, 1, 10, 100):
            P = TGeoParams(float(p), M)
            pmf = np.array([tgeo_pmf(P, n) for n in range(M + 1)])
            worst_sum = max(worst_sum, abs(pmf.sum() - 1))
            for n in range(M + 1):
                worst_tail = max(worst_tail, abs(tgeo_tail(P, n) - (1 - float(p)) ** n))
            # exact pmf from the closed form, for the sampling check
            exact = np.array([float(p * (1 - p) ** n) if n < M else float((1 - p) ** M) for n in range(M + 1)])
            x = tgeo_from_uniform(P, Stream(2024, int(p.denominator), M).uniforms(np.arange(1_000_000)))
            freq = np.bincount(x, minlength=M + 1) / len(x)
            sigma = np.sqrt(exact * (1 - exact) / len(x))
            z = np.abs(freq - exact) / np.where(sigma > 0, sigma, 1)
            worst_z = max(worst_z, float(z[sigma > 0].max()) if (sigma > 0).any() else 0.0)
            assert (freq[sigma == 0] == exact[sigma == 0]).all()
    ok = worst_sum <= 1e-12 and worst_tail <= 1e-12 and worst_z <= 4
    report(capsys, 1, ok, f"|sum pmf - 1| <= {worst_sum:.1e}, |tail - (1-p)^n| <= {worst_tail:.1e}, "
                          f"max sampling z = {worst_z:.2f} (<= 4)", time.perf_counter() - t0, 5)


# 2 ---------------------------------------------------------------------------

def test_criterion_2_carving(capsys):
    t0 = time.perf_counter()
    bad = []
    worst = 0
    for fam in ("grid:64", "path:5000"):
        g = generate(fam)
        n = g.vertex_count
        for M in (4, 8):
            classes = make_color_classes(g, M)
            for seed in range(100):
                t = tgeo_from_uniform(TGeoParams(0.5, M), Stream(seed, M).uniforms(np.arange(n)))
                p = carve(CarvingInput(g, M, classes, t), validate=False)
                again = carve(CarvingInput(g, M, classes, t.copy()), validate=False)
                diam = p.max_diameter(g)
                worst = max(worst, diam / (2 * M))
                if not is_partition(p, n) or diam > 2 * M or not np.array_equal(p.cluster_of, again.cluster_of):
                    bad.append((fam, M, seed))
    report(capsys, 2, not bad, f"800 carvings, partition + deterministic, max diam/2M = {worst:.2f}; "
                               f"bad = {bad[:3]}", time.perf_counter() - t0, 30)


# 3 ---------------------------------------------------------------------------

def test_criterion_3_cut_bound(capsys):
    t0 = time.perf_counter()
    g = generate("path:200000")
    p, r = 1 / 500, 10
    M = auto_M(2, p)
    assert M == math.floor(8 * math.log(500) * 500)
    rep = cut_rate_experiment(g, 2.0, p, M, r, 20, seed=3, graph_name="path:200000")
    frac = rep["empirical_cut_fraction"]
    ok = rep["preconditions_met"] and frac <= 20 * r * p
    report(capsys, 3, ok, f"cut fraction {frac:.4f} <= 20rp = {20 * r * p:.2f}, M = {M}, "
                          f"preconditions {rep['preconditions_met']}", time.perf_counter() - t0, 300)


# 4 / 5 -------------------------------------------------------------------------

GRID_PARAMS = DecompositionParams(2, None, 3, p=0.05, M=10)
C4_LIMIT = 120.0
_c4_cache: dict = {}


def criterion_4_runs():
    if not _c4_cache:
        g = generate("grid:64")
        runs = []
        per_seed = C4_LIMIT / 10 - 2.0   # leave room for CSP setup inside the limit
        t0 = time.perf_counter()
        for seed in range(10):
            try:
                d, st = build_padded(g, GRID_PARAMS, seed, None, mc_samples=0, deadline=per_seed)
                runs.append((seed, d, st, None))
            except ConstructionFailed as exc:
                runs.append((seed, exc.partial, exc.stats, exc))
        _c4_cache.update(g=g, runs=runs, build_seconds=time.perf_counter() - t0)
    return _c4_cache["g"], _c4_cache["runs"]


def test_criterion_4_padded_grid(capsys):
    g, runs = criterion_4_runs()
    build = _c4_cache["build_seconds"]
    tv = time.perf_counter()
    lines, ok = [], True
    for seed, d, st, exc in runs:
        counts = brute_padded_counts(g, d.layers, 2)
        diam = brute_max_diameter(g, d.layers)
        seed_ok = exc is None and counts.min() >= 1 and diam <= 20
        ok &= seed_ok
        if not seed_ok:
            lines.append(f"seed {seed}: {st.stop_reason} after {st.resample_count} resamples, "
                         f"{int((counts == 0).sum())} unpadded vertices, max diam {diam}")
    conv = sum(e is None for _, _, _, e in runs)
    # the default budget is 1000 (#vars + #constraints); runs are capped by the criterion's wall-clock limit,
    # and the limit is charged to construction only (the brute-force verification is reported separately)
    verify_s = time.perf_counter() - tv
    report(capsys, 4, ok, f"{conv}/10 seeds converged; " + ("; ".join(lines[:3]) or "all padded, <= 2M bounded")
           + f"; verification {verify_s:.0f}s", build, C4_LIMIT)


def test_criterion_5_strengthen(capsys):
    t0 = time.perf_counter()
    g, runs = criterion_4_runs()
    seed, src, st, exc = runs[0]
    out = strengthen(g, src, 2, 1 / 3, strict=False)
    counts = brute_padded_counts(g, out.layers, 2)
    measured = f"{out.m} layers, min padded layers {counts.min()} (need 6)"
    ok = exc is None and out.m == 9 and counts.min() >= 6
    note = "" if exc is None else "; source did not converge (criterion 4), so the strengthening input is invalid"
    report(capsys, 5, ok, measured + note, time.perf_counter() - t0, 180)


# 6 ---------------------------------------------------------------------------

def test_criterion_6_tfae(capsys):
    t0 = time.perf_counter()
    problems = []
    r = 2                 # cover disjointness; source padding r/2 + 1 = 2
    for s in range(50):
        g = generate(f"er-bounded:{20 + s % 41},3,{s}")
        n = g.vertex_count
        d, _ = build_padded(g, DecompositionParams(r // 2 + 1, None, 3, p=0.3, M=6), s, mc_samples=0, deadline=10)
        alpha = math.log(max(2, brute_max_diameter(g, d.layers))) / math.log(r // 2 + 1)
        d = Decomposition(d.layers, DecompositionParams(r // 2 + 1, alpha, 3))
        cover = cover_from_padded(g, d, r)
        D = (r / 2 + 1) ** alpha
        # brute-force cover checks: r-disjoint, D-bounded, covering
        dist = distance_rows(g, np.arange(n))
        covered = np.zeros(n, dtype=bool)
        for sets in cover.layers:
            for i, a in enumerate(sets):
                covered[a] = True
                sub = dist[np.ix_(a, a)]
                if (sub < 0).any() or sub.max() > D + 1e-9:
                    problems.append((s, "cover bound"))
                for b_ in sets[i + 1:]:
                    x = dist[np.ix_(a, b_)]
                    if ((x >= 0) & (x <= r)).any():
                        problems.append((s, "cover disjoint"))
        if not covered.all():
            problems.append((s, "cover coverage"))
        # back: the r-disjoint cover is a (2r', D)-cover with r' = r/2; expanding by r' gives clusters of
        # diameter <= D + 2r' padding every covered vertex at r'
        rp = r // 2
        Dc = max([0] + [int(dist[np.ix_(a, a)].max()) for sets in cover.layers for a in sets])
        back = padded_from_cover(g, Cover(cover.layers, r, Dc), rp)
        counts = brute_padded_counts(g, back.layers, rp)
        if (counts < 1).any():
            problems.append((s, "padding"))
        if brute_max_diameter(g, back.layers) > Dc + 2 * rp:
            problems.append((s, "decomposition bound"))
        for p in back.layers:
            if not is_partition(p, n):
                problems.append((s, "partition"))
    report(capsys, 6, not problems, f"50 er-bounded graphs (n <= 60); problems = {problems[:4]}",
           time.perf_counter() - t0, 60)


# 7 ---------------------------------------------------------------------------

def test_criterion_7_nesting(capsys):
    t0 = time.perf_counter()
    g = generate("grid:64")
    n = g.vertex_count
    # scales r_0 < r_1 < r_2 with 2 M_k <= r_{k+1}, so each coarser scale may absorb the finer clusters
    sch = EmbeddingSchedule.desk(2, 0.5, 126, alpha=1.1, beta=2.8, m=4, phases=[1.8], eta=0.5,
                                 carve_M=[[2, 50, 126]], carve_p=[[0.3, 0.05, 0.01]], max_scales=3)
    chain, reps = nested_schedule(g, sch, 0, seed=0)
    names = ["D_0", "F_0", "D_1"]
    ok = len(chain) == 3
    msgs = []
    for a, b_ in zip(chain, chain[1:]):
        for P, Q in zip(a.layers, b_.layers):
            # every fine cluster carries exactly one coarse label
            lab = Q.cluster_of
            if any(len(set(lab[c].tolist())) != 1 for c in P.clusters):
                ok = False
    viol = 0
    for k in (1, 2):
        r = int(math.floor(sch.scales[0][k]))
        # rebuild the source decomposition exactly as the schedule did and recheck inheritance vertex by vertex
        from gridembed.embedding import carve_layers, CARVE_TAG
        src = carve_layers(g, sch.m, sch.carve_p[0][k], sch.carve_M[0][k], Stream(0, CARVE_TAG, 0, k, 0), 2 * r)
        big = brute_padded_counts_per_layer(g, src.layers, 2 * r)
        small = brute_padded_counts_per_layer(g, chain[k].layers, r)
        viol += int((big & ~small).sum())
        msgs.append(f"{names[k - 1]} <= {names[k]}")
    ok = ok and viol == 0
    report(capsys, 7, ok, f"refinement {', '.join(msgs)} checked, inheritance violations {viol} over {n} vertices "
                          f"x {sch.m} layers", time.perf_counter() - t0, 120)


def brute_padded_counts_per_layer(g, layers, r):
    n = g.vertex_count
    out = np.zeros((n, len(layers)), dtype=bool)
    for rows in np.array_split(np.arange(n), max(1, n // 256)):
        d = distance_rows(g, rows)
        inside = (d >= 0) & (d <= r)
        for i, p in enumerate(layers):
            lab = p.cluster_of
            out[rows, i] = np.where(inside, lab[None, :] == lab[rows][:, None], True).all(axis=1)
    return out


# 8 ---------------------------------------------------------------------------

_c8_cache: dict = {}


def criterion_8_embeddings():
    if not _c8_cache:
        g = generate("grid:64")
        sch = desk_preset(2, 0.5, graph_diameter(g), m=4, phases=2)
        out = []
        for seed in range(5):
            try:
                emb, rep = coarse_embed(g, sch, seed, budget=300, attempts=4, cutoff=200_000, mc_samples=0)
                out.append((seed, emb, None))
            except ConstructionFailed as exc:
                out.append((seed, None, exc))
        _c8_cache.update(g=g, sch=sch, runs=out)
    return _c8_cache["g"], _c8_cache["sch"], _c8_cache["runs"]


def test_criterion_8_coarse_embedding(capsys):
    t0 = time.perf_counter()
    g, sch, runs = criterion_8_embeddings()
    assert len(sch.phases) == 2 and all(len(s) == 2 for s in sch.scales) and sch.m == 4
    ok, parts = True, []
    for seed, emb, exc in runs:
        if exc is not None:
            ok = False
            parts.append(f"seed {seed}: {exc}")
            continue
        vr = verify_embedding(g, emb, 0.5)
        # independent recheck of stretch and of the ratio beyond R_emp
        pos = emb.positions
        e = g.edges()
        stretch = int(np.abs(pos[e[:, 0]] - pos[e[:, 1]]).max())
        worst = math.inf
        for rows, d, diff in scan_pairs(g, pos):
            far = d >= vr.R_emp
            if far.any():
                worst = min(worst, float((diff[far] / d[far] ** 0.5).min()))
        seed_ok = vr.max_edge_stretch <= 1 and stretch <= 1 and worst >= 1 and vr.R_emp_nonvacuous
        ok &= seed_ok
        parts.append(f"seed {seed}: stretch {stretch}, R_emp {vr.R_emp}, min ratio beyond {worst:.3f}")
    report(capsys, 8, ok, "; ".join(parts), time.perf_counter() - t0, 600)


# 9 ---------------------------------------------------------------------------

def test_criterion_9_injective(capsys):
    t0 = time.perf_counter()
    ok, parts = True, []
    g64, sch64, runs = criterion_8_embeddings()
    tree = generate("tree:6,2")
    sch_t = desk_preset(2, 0.5, graph_diameter(tree))
    # trees are outside the bounded-growth setting; if no separating contraction is found the best-effort
    # contraction is used as the base (injectivity does not depend on the lower bound)
    base_t = coarse_embed(tree, sch_t, 0, budget=300, attempts=4, mc_samples=0, strict=False)
    cases = [("grid:64", g64, sch64, runs[0][1], None), ("tree:6,2", tree, sch_t, base_t[0], base_t[1])]
    for name, g, sch, base, brep in cases:
        R = verify_embedding(g, base, sch.eps).R_emp
        for s in sorted({1, R}):
            emb, info = injective_embed(g, sch, s, 0, base=(base, brep or {}))
            pos = emb.positions
            collisions = len(pos) - len(np.unique(pos, axis=0))
            excess = -math.inf
            for rows, d, diff in scan_pairs(g, pos):
                same = d >= 0
                excess = max(excess, float((diff - np.maximum(d, s))[same].max()))
            colors = info["injective"]["colors"]
            k = info["injective"]["k"]
            k_formula = math.ceil(round(math.log(colors) / math.log(s + 1), 12)) if colors > 1 else 0
            case_ok = collisions == 0 and excess <= 0 and k == k_formula
            ok &= case_ok
            parts.append(f"{name} s={s}: collisions {collisions}, max(|df| - max(d,s)) {excess:.0f}, "
                         f"colors {colors}, k {k} (formula {k_formula})")
    report(capsys, 9, ok, "; ".join(parts), time.perf_counter() - t0, 600)


# 10 --------------------------------------------------------------------------

def corpus_graphs():
    out = [(os.path.basename(f), load_graph(open(f).read())) for f in sorted(glob.glob(os.path.join(CORPUS, "*.edges")))]
    with open(os.path.join(CORPUS, "families.txt")) as fh:
        fams = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    out += [(f, generate(f)) for f in fams]
    return out


def test_criterion_10_cocycle_laws(capsys):
    t0 = time.perf_counter()
    checked, bad, triples = [], [], 0
    for name, g in corpus_graphs():
        n = g.vertex_count
        if n > 50:
            continue
        sch = desk_preset(2, 0.5, graph_diameter(g))
        emb, rep = coarse_embed(g, sch, 0, budget=300, attempts=4, mc_samples=0, strict=False)
        e = g.edges()
        coc = Cocycle(g, e, emb.coords[e[:, 1]] - emb.coords[e[:, 0]])
        comp = g.component_labels
        delta = np.zeros((n, n, coc.dim), dtype=np.int64)
        for x in range(n):
            for y in range(n):
                if comp[x] == comp[y]:
                    delta[x, y] = coc.value(x, y)
        ok = not delta[np.arange(n), np.arange(n)].any()
        for x in range(n):
            same = comp == comp[x]
            ys = np.flatnonzero(same)
            # delta(x,y) + delta(y,z) == delta(x,z) for all y, z in x's component
            lhs = delta[x, ys][:, None, :] + delta[np.ix_(ys, ys)]
            ok &= bool((lhs == delta[x, ys][None, :, :]).all())
            triples += len(ys) ** 2
        # the realized potentials reproduce the path-sum values
        ok &= bool(all((delta[x, y] == emb.coords[y] - emb.coords[x]).all()
                       for x in range(n) for y in range(n) if comp[x] == comp[y]))
        (checked if ok else bad).append(name)
    report(capsys, 10, not bad and len(checked) > 0,
           f"{len(checked)} corpus graphs (<= 50 vertices), {triples} triples exact; failures {bad}",
           time.perf_counter() - t0, 60)
