from __future__ import annotations

import itertools
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import apsp, connected_graphs, graphs, to_nx
from gridembed.decomposition import Decomposition, DecompositionParams
from gridembed.embedding import (Cocycle, CocycleError, EmbeddingSchedule, GridEmbedding, RefinementError, StepPlan,
                                 boundary_depth, carve_layers, coarse_embed, desk_preset, digits_needed,
                                 dumpling_psi, dumpling_step, enumerate_pairs, graph_diameter, injective_augment,
                                 is_dumpling_contraction, nest, nest_layer, nested_schedule,
                                 padding_inheritance_violations, read_tsv, realize_cocycle, refines,
                                 verify_embedding)
from gridembed.generators import generate
from gridembed.graph import Graph, Partition
from gridembed.rng import Stream


def deco(layers, r=1):
    return Decomposition(list(layers), DecompositionParams(r, None, len(layers)))


def reference_depth(g, P, Q):
    """Quotient distances from each P-cluster to the P-clusters touching the outside of its Q-cluster."""
    lab, q = P.cluster_of, Q.cluster_of
    H = nx.Graph()
    H.add_nodes_from(range(len(P.clusters)))
    for u, v in g.edges().tolist():
        if lab[u] != lab[v]:
            H.add_edge(int(lab[u]), int(lab[v]))
    bnd = {int(lab[u]) for u, v in g.edges().tolist() if q[u] != q[v]} | \
          {int(lab[v]) for u, v in g.edges().tolist() if q[u] != q[v]}
    out = np.full(g.vertex_count, -1)
    if not bnd:
        return out
    dist = nx.multi_source_dijkstra_path_length(H, bnd)
    for v in range(g.vertex_count):
        out[v] = dist.get(int(lab[v]), -1)
    return out


def random_chain(g, seed, m=2):
    """P from a small carving, Q from a bigger one made coarser than P by nesting."""
    P = carve_layers(g, m, 0.4, 1, Stream(seed, 1), 1)
    Q0 = carve_layers(g, m, 0.3, 3, Stream(seed, 2), 2)
    return P, nest(P, Q0)


class TestDumplingPsi:
    def test_path_example(self):
        g = generate("path:10")
        psi = dumpling_psi(g, [Partition.singletons(10)], [Partition.from_labels([0] * 5 + [1] * 5)],
                           [np.array([1, 1])])
        assert psi[:, 0].tolist() == [3, 2, 1, 0, 0, 0, 0, 1, 2, 3]

    def test_empty_boundary(self):
        g = generate("path:6")
        psi = dumpling_psi(g, [Partition.singletons(6)], [Partition.from_labels([0] * 6)], [np.array([0])])
        assert not psi.any()

    def test_full_truncation(self):
        g = generate("path:10")
        psi = dumpling_psi(g, [Partition.singletons(10)], [Partition.from_labels([0] * 5 + [1] * 5)],
                           [np.array([10, 4])])
        assert not psi.any()

    def test_refinement_required(self):
        with pytest.raises(RefinementError):
            dumpling_psi(generate("path:4"), [Partition.from_labels([0, 0, 1, 1])],
                         [Partition.from_labels([0, 1, 1, 1])], [np.array([0, 0])])

    @given(graphs(max_n=30), st.integers(0, 100))
    def test_depth_matches_reference(self, g, seed):
        P, Q = random_chain(g, seed, m=1)
        assert np.array_equal(boundary_depth(g, P.layers[0], Q.layers[0]),
                              reference_depth(g, P.layers[0], Q.layers[0]))

    @given(graphs(max_n=30), st.integers(0, 100), st.integers(0, 4))
    def test_is_dumpling_contraction(self, g, seed, tval):
        P, Q = random_chain(g, seed)
        t = [np.full(len(q.clusters), tval) for q in Q.layers]
        psi = dumpling_psi(g, P, Q, t)
        assert is_dumpling_contraction(g, psi, Q)
        assert (psi >= 0).all()
        for i, p in enumerate(P.layers):
            for c in p.clusters:
                assert len(set(psi[c, i].tolist())) == 1


class TestDumplingStep:
    def test_no_pairs(self):
        g = generate("path:5")
        plan = StepPlan.for_radius(2.0, 1.5, 2.0, 0.5)
        P = deco([Partition.singletons(5)] * 2)
        Q = deco([Partition.from_labels([0, 0, 0, 1, 1])] * 2)
        psi, stats, rep = dumpling_step(g, P, Q, np.zeros((5, 2), dtype=np.int64), plan, eps=0.5, eta=0.25, b=1,
                                        alpha=1.5, seed=0)
        assert "note" in rep and stats.converged and is_dumpling_contraction(g, psi, Q)

    def test_path_example(self):
        # r = 2, beta = 2, gamma = 3, m = 4, eta = 1/4, eps = 1/2; F = four shifted interval tilings
        g = generate("path:201")
        plan = StepPlan.for_radius(2.0, 1.5, 2.0, 0.5)
        assert plan.interval == (4.0, 8.0) and plan.gamma == 3.0
        v = np.arange(201)
        F = deco([Partition.from_labels((v + 5 * i) // 20) for i in range(4)], 2)
        D = deco([Partition.singletons(201)] * 4)
        psi, stats, rep = dumpling_step(g, D, F, np.zeros((201, 4), dtype=np.int64), plan, eps=0.5, eta=0.25, b=1,
                                        alpha=1.5, seed=0, pairs="exhaustive")
        assert stats.converged
        d = apsp(g)
        U, V = np.nonzero((d > 4) & (d <= 8))
        hits = (np.abs(psi[U] - psi[V]) >= plan.threshold).sum(axis=1)
        assert (hits >= 0.75 * 4 / 2).all()

    def test_grid_condition_b_recheck(self):
        g = generate("grid:32")
        sch = desk_preset(2, 0.5, graph_diameter(g))
        emb, rep = coarse_embed(g, sch, seed=0, budget=300, attempts=4, mc_samples=0, pairs="exhaustive")
        d = apsp(g)
        # rebuild each phase's psi from the realized coordinates and recheck every enumerated pair
        for j, plan in enumerate(sch.steps()):
            f = emb.coords[:, j * sch.m:(j + 1) * sch.m]
            U, V = np.nonzero((d > plan.interval[0]) & (d <= plan.interval[1]) & (np.arange(1024)[:, None] < np.arange(1024)))
            need = (1 - sch.eta) * sch.m / 2
            hits = (np.abs(f[U] - f[V]) >= plan.threshold).sum(axis=1)
            assert (hits >= need).all()
            assert rep["phases"][j]["steps"][0]["pairs"]["mode"] == "exhaustive"

    def test_enumerate_pairs_matches_oracle(self):
        g = generate("grid:8")
        U, V, D, info = enumerate_pairs(g, 3.5, 6.0, pairs="exhaustive")
        d = apsp(g)
        want = {(u, v) for u, v in zip(*np.nonzero((d > 3) & (d <= 6))) if u < v}
        assert set(zip(U.tolist(), V.tolist())) == want and (d[U, V] == D).all()

    def test_enumerate_pairs_sampled(self):
        g = generate("grid:8")
        U, V, D, info = enumerate_pairs(g, 3, 6, pairs="sample:0.25", seed=3)
        assert info["mode"] == "sample" and info["stride"] == 4 and 0 < len(U) < info["estimated_pairs"]


class TestNesting:
    def test_example(self):
        out = nest_layer(Partition.from_labels([0, 0, 1, 1]), Partition.from_labels([0, 0, 0, 1]))
        assert out.as_sets() == {frozenset({0, 1}), frozenset({2, 3})}

    def test_already_nested(self):
        P, Q = Partition.from_labels([0, 0, 1, 1, 2]), Partition.from_labels([0, 0, 0, 0, 1])
        assert nest_layer(P, Q).as_sets() == Q.as_sets()

    @given(graphs(max_n=30), st.integers(0, 100))
    def test_refinement_and_inheritance(self, g, seed):
        P = carve_layers(g, 2, 0.4, 1, Stream(seed, 1), 1)
        Q = carve_layers(g, 2, 0.3, 3, Stream(seed, 2), 2)
        out = nest(P, Q)
        assert all(refines(P, out)) and all(refines(out, out))
        r = max(int(p.max_diameter(g)) for p in P.layers)
        assert padding_inheritance_violations(g, Q, out, r) == 0

    def test_two_scale_chain_on_grid(self, grid64):
        sch = desk_preset(2, 0.5, 126)
        chain, reps = nested_schedule(grid64, sch, 0, seed=0)
        assert len(chain) == 2 and all(refines(chain[0], chain[1]))
        assert reps[1]["inheritance_violations"] == 0


class TestCocycle:
    def test_triangle(self):
        tri = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
        # edges are ordered (0,1), (0,2), (1,2)
        assert realize_cocycle(tri, np.array([1, 2, 1])).coords.ravel().tolist() == [0, 1, 2]
        with pytest.raises(CocycleError) as exc:
            realize_cocycle(tri, np.array([1, 3, 1]))
        assert exc.value.edge == (0, 2)

    def test_zero(self):
        g = generate("grid:4")
        assert not realize_cocycle(g, np.zeros((g.edge_count, 3), dtype=np.int64)).coords.any()

    @given(graphs(max_n=20), st.integers(1, 3), st.integers(0, 10**6))
    def test_laws_and_potentials(self, g, dim, seed):
        pot = np.random.default_rng(seed).integers(-5, 6, size=(g.vertex_count, dim))
        e = g.edges()
        emb = realize_cocycle(g, pot[e[:, 1]] - pot[e[:, 0]], e)
        base = emb.basepoints
        assert not emb.coords[base].any()
        comp = g.component_labels
        assert np.array_equal(emb.coords, pot - pot[base[comp]])
        coc = Cocycle(g, e, pot[e[:, 1]] - pot[e[:, 0]])
        for x, y in itertools.product(range(min(g.vertex_count, 6)), repeat=2):
            if comp[x] == comp[y]:
                assert np.array_equal(coc.value(x, y), emb.coords[y] - emb.coords[x])
                assert not coc.value(x, x).any()

    def test_offsets_separate_components(self):
        g = Graph.from_edges(6, [(0, 1), (2, 3), (4, 5)])
        emb = realize_cocycle(g, np.array([[1], [1], [1]]))
        pos = emb.positions
        assert len({tuple(r) for r in pos.tolist()}) == 6
        assert emb.offsets[0].tolist() == [0]

    def test_tsv_roundtrip(self):
        g = generate("path:5")
        emb = realize_cocycle(g, np.ones((4, 2), dtype=np.int64))
        assert np.array_equal(read_tsv(emb.to_tsv()), emb.positions)
        with pytest.raises(ValueError):
            read_tsv("0 1 2\n0 3 4\n")


class TestVerify:
    def test_constant_map(self):
        g = generate("path:2")
        rep = verify_embedding(g, np.zeros((2, 1), dtype=np.int64), 0.5, R_emp=1)
        assert rep.contraction_ok and rep.min_far_ratio == 0 and not rep.injective

    def test_identity_path(self):
        g = generate("path:30")
        rep = verify_embedding(g, np.arange(30)[:, None], 0.5)
        assert rep.max_edge_stretch == 1 and rep.R_emp == 1 and rep.min_far_ratio == 1.0 and rep.injective

    @given(connected_graphs(max_n=20), st.integers(0, 10**6))
    def test_ratio_against_brute_force(self, g, seed):
        f = np.random.default_rng(seed).integers(-3, 4, size=(g.vertex_count, 2))
        rep = verify_embedding(g, f, 0.5, R_emp=1)
        d = apsp(g)
        U, V = np.nonzero(d > 0)
        if len(U):
            ratios = np.abs(f[U] - f[V]).max(axis=1) / d[U, V] ** 0.5
            assert rep.min_far_ratio == pytest.approx(ratios.min())


class TestSchedule:
    def test_theory_constants(self):
        s = EmbeddingSchedule.theory_mode(1, 0.25, 100)
        assert s.m == 5760 and s.alpha == 1 + 0.25 / 12 and s.beta == 48
        assert len(s.phases) == math.ceil(2 * math.log(48) / math.log(s.alpha)) and s.steps() == []

    def test_theory_one_vertex(self):
        g = generate("path:1")
        s = EmbeddingSchedule.theory_mode(1, 0.25, 0)
        emb, rep = coarse_embed(g, s, 0)
        assert emb.dim == s.dim and not emb.coords.any()

    def test_desk_scales_nested(self):
        s = desk_preset(2, 0.5, 126)
        for rs in s.scales:
            assert len(rs) == 2 and rs[1] >= rs[0] ** s.alpha
        ivs = s.covered_intervals()
        assert len(ivs) == 1 and ivs[0][1] == pytest.approx(126)

    def test_coarse_embed_is_contraction(self):
        g = generate("grid:16")
        emb, rep = coarse_embed(g, desk_preset(2, 0.5, graph_diameter(g)), seed=1, budget=300, attempts=4,
                                mc_samples=0)
        v = verify_embedding(g, emb, 0.5)
        assert v.contraction_ok and v.R_emp_nonvacuous


class TestInjective:
    def test_k_formula(self):
        assert math.ceil(2 * math.log(100) / math.log(10)) == 4
        assert digits_needed(8, 1) == 3 and digits_needed(1, 5) == 0 and digits_needed(10, 9) == 1

    @given(graphs(max_n=25), st.integers(1, 4))
    def test_injective_with_large_R(self, g, s):
        base = realize_cocycle(g, np.zeros((g.edge_count, 1), dtype=np.int64))
        R = max(1, g.vertex_count)
        emb, info = injective_augment(g, base, R, s, b=2)
        rep = verify_embedding(g, emb, 0.5, s=s)
        assert rep.injective and rep.excess_over_max_d_s <= 0
        assert info["k"] == digits_needed(max(info["colors"], 1), s)

    def test_path_identity_base(self):
        g = generate("path:40")
        base = realize_cocycle(g, np.ones((39, 1), dtype=np.int64))
        emb, info = injective_augment(g, base, 1, 1)
        rep = verify_embedding(g, emb, 0.5, s=1)
        assert rep.injective and rep.contraction_ok and info["colors"] == 2 and info["k"] == 1
