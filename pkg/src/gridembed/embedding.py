"""Coarse embeddings into grids: dumpling-contractions, nested scales, cocycles, injectivity."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, depth_first_order

from . import _kernels as K
from .carving import TGeoParams, make_color_classes, tgeo_from_uniform
from .decomposition import (ConstructionFailed, Decomposition, DecompositionParams, build_padded,
                            layer_class_order)
from .graph import Graph, Partition, greedy_power_coloring, quotient_graph
from .lll import ConstraintSystem, SolveStats, UniformDomain, attach_lll, estimate_lll_params, mt_solve
from .rng import Stream

CARVE_TAG = 0xCA
STEP_TAG = 0x5E
PAIR_TAG = 0x9A
ESTIMATE_TAG = 0xE5

MAX_COORD_CELLS = 50_000_000


class RefinementError(ValueError):
    pass


class CocycleError(ValueError):
    def __init__(self, message: str, edge: tuple[int, int]):
        super().__init__(message)
        self.edge = edge


# ---------------------------------------------------------------------------
# schedule


@dataclass
class StepPlan:
    """One dumpling step: D_n at scale r_D, F_n at scale r_F, lemma radius R."""

    phase: int
    n: int
    r_D: float
    r_F: float
    R: float
    beta: float
    gamma: float
    interval: tuple[float, float]
    threshold: float
    t_max: int

    @classmethod
    def for_radius(cls, R: float, alpha: float, beta: float, eps: float, phase: int = 0, n: int = 0) -> "StepPlan":
        """Plan for a single step at lemma radius R (gamma = alpha * beta)."""
        gamma = alpha * beta
        return cls(phase=phase, n=n, r_D=R, r_F=R ** (beta / alpha), R=R, beta=beta, gamma=gamma,
                   interval=(R ** beta, R ** gamma), threshold=R ** (gamma * (1 - eps)),
                   t_max=math.floor(R ** (beta / alpha) / (R + 1)))

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class EmbeddingSchedule:
    """Scales, exponents and per-scale carving parameters for coarse_embed.

    Phase j uses scales r_k = x_j^(beta^k), truncated once r_k exceeds the
    diameter; step n pairs D_n (scale r_{2n}) with F_n (scale r_{2n+1}) and
    targets distances in (R^beta, R^gamma] with R = r_{2n+1}^(alpha/beta).
    """

    b: float
    eps: float
    alpha: float
    beta: float
    gamma: float
    m: int
    eta: float
    x0: float
    phases: list[float]
    scales: list[list[float]]
    carve_M: list[list[int]]
    carve_p: list[list[float]]
    mode: str = "desk"
    build: str = "carve"
    theory: dict = field(default_factory=dict)

    @classmethod
    def theory_mode(cls, b: float, eps: float, diameter: int, r: float = 1.0) -> "EmbeddingSchedule":
        if not 0 < eps < 0.5:
            raise ValueError("eps must lie in (0, 1/2)")
        alpha, beta = 1 + eps / 12, 12 / eps
        m = math.ceil(1440 * b / eps)
        ell = math.ceil(2 * math.log(beta) / math.log(alpha))
        log_x0 = max((200 / eps) * math.log(1e7 * b / eps), math.log(r))
        phases = [_exp_or_inf(log_x0 * alpha ** j) for j in range(ell)]
        sch = cls._make(b, eps, alpha, beta, m, 0.25, _exp_or_inf(log_x0), phases, diameter, "theory", "solve",
                        None, None)
        sch.theory["log10_x0"] = log_x0 / math.log(10)
        return sch

    @classmethod
    def desk(cls, b: float, eps: float, diameter: int, *, alpha: float, beta: float, m: int,
             phases: Sequence[float], eta: float = 0.25, carve_M=None, carve_p=None,
             build: str = "carve", max_scales: int | None = None) -> "EmbeddingSchedule":
        if not 0 < eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if not 1 < alpha < beta:
            raise ValueError("need 1 < alpha < beta")
        phases = list(phases)
        return cls._make(b, eps, alpha, beta, m, eta, phases[0] if phases else 1.0, phases, diameter,
                         "desk", build, carve_M, carve_p, max_scales)

    @classmethod
    def _make(cls, b, eps, alpha, beta, m, eta, x0, phases, diameter, mode, build, carve_M, carve_p,
              max_scales=None):
        scales = [_scale_list(x, beta, diameter)[:max_scales] for x in phases]
        Ms, ps = [], []
        for j, rs in enumerate(scales):
            Mj = [_pick(carve_M, j, k, math.floor(r ** alpha / 2)) for k, r in enumerate(rs)]
            pj = [_pick(carve_p, j, k, 1 / (M + 1)) for k, M in enumerate(Mj)]
            Ms.append([int(M) for M in Mj])
            ps.append([float(p) for p in pj])
        ell_theory = math.ceil(2 * math.log(12 / eps) / math.log(1 + eps / 12)) if eps < 1 else None
        theory = {"alpha": 1 + eps / 12, "beta": 12 / eps, "gamma": (1 + eps / 12) * 12 / eps,
                  "m": math.ceil(1440 * b / eps), "phases": ell_theory}
        return cls(b, eps, alpha, beta, alpha * beta, m, eta, x0, phases, scales, Ms, ps, mode, build, theory)

    @property
    def dim(self) -> int:
        return len(self.phases) * self.m

    def steps(self) -> list[StepPlan]:
        out = []
        for j, rs in enumerate(self.scales):
            for n in range(len(rs) // 2):
                r_D, r_F = rs[2 * n], rs[2 * n + 1]
                R = r_F ** (self.alpha / self.beta)
                out.append(StepPlan(
                    phase=j, n=n, r_D=r_D, r_F=r_F, R=R, beta=self.beta, gamma=self.gamma,
                    interval=(R ** self.beta, R ** self.gamma),
                    threshold=R ** (self.gamma * (1 - self.eps)),
                    t_max=math.floor(R ** (self.beta / self.alpha) / (R + 1)),
                ))
        return out

    def covered_intervals(self) -> list[tuple[float, float]]:
        """Union of the step intervals, merged."""
        ivs = sorted(s.interval for s in self.steps())
        merged: list[list[float]] = []
        for lo, hi in ivs:
            if merged and lo <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        return [(a, b) for a, b in merged]

    def to_json(self) -> dict:
        d = asdict(self)
        d["steps"] = [s.to_json() for s in self.steps()]
        d["covered_intervals"] = self.covered_intervals()
        return d


def graph_diameter(g: Graph) -> int:
    """Largest intra-component distance (exact, one BFS per vertex)."""
    if g.vertex_count == 0:
        return 0
    return int(K.eccentricities(g.indptr, g.indices, np.arange(g.vertex_count, dtype=np.int64)).max())


def desk_preset(b: float, eps: float, diameter: int, *, m: int = 4, phases: int = 2) -> EmbeddingSchedule:
    """Small-graph defaults: alpha=1.1, beta=10, eta=1/2, two scales per phase.

    x0 is chosen so the last phase's interval ends at the diameter; D-scales
    are singletons and F-scales are carvings with M = ceil(5*diameter/7),
    p = 0.005 (large, nearly fixed-radius balls, so tents are tall).
    """
    alpha, beta = 1.1, 10.0
    top = max(diameter, 2)
    x0 = top ** (1 / (beta * alpha ** (phases + 1)))
    M = math.ceil(5 * top / 7)
    return EmbeddingSchedule.desk(b, eps, diameter, alpha=alpha, beta=beta, m=m, eta=0.5,
                                  phases=[x0 ** (alpha ** j) for j in range(phases)],
                                  carve_M=[[0, M]] * phases, carve_p=[[1.0, 0.005]] * phases, max_scales=2)


def _exp_or_inf(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _scale_list(x: float, beta: float, diameter: int) -> list[float]:
    out = []
    r = x
    while r <= diameter and len(out) < 64:
        out.append(r)
        nxt = _exp_or_inf(beta * math.log(r)) if r > 0 else 0.0
        if nxt <= r:
            break
        r = nxt
    return out


def _pick(table, j, k, default):
    if table is None:
        return default
    if isinstance(table, (int, float)):
        return table
    row = table[j] if j < len(table) else None
    if row is None:
        return default
    if isinstance(row, (int, float)):
        return row
    return row[k] if k < len(row) else default


# ---------------------------------------------------------------------------
# nesting


def refines(fine: Decomposition | Sequence[Partition], coarse: Decomposition | Sequence[Partition]) -> list[bool]:
    """Layer-wise refinement check: every fine cluster has constant coarse label."""
    fl = fine.layers if isinstance(fine, Decomposition) else list(fine)
    cl = coarse.layers if isinstance(coarse, Decomposition) else list(coarse)
    if len(fl) != len(cl):
        raise ValueError("refinement compares tuples of equal length")
    out = []
    for p, q in zip(fl, cl):
        lab = q.cluster_of
        lo = np.full(len(p.clusters), np.iinfo(np.int64).max)
        hi = np.full(len(p.clusters), -1)
        np.minimum.at(lo, p.cluster_of, lab)
        np.maximum.at(hi, p.cluster_of, lab)
        out.append(bool((lo == hi).all()))
    return out


def nest_layer(P: Partition, Q: Partition) -> Partition:
    """{C' : C in Q} plus the leftover P-clusters, where C' = {x in C : C_x ⊆ C}."""
    q = Q.cluster_of
    k = len(P.clusters)
    lo = np.full(k, np.iinfo(np.int64).max)
    hi = np.full(k, -1)
    np.minimum.at(lo, P.cluster_of, q)
    np.maximum.at(hi, P.cluster_of, q)
    inside = (lo == hi)[P.cluster_of]
    labels = np.where(inside, q, len(Q.clusters) + P.cluster_of)
    return Partition.from_labels(labels)


def nest(D: Decomposition, F: Decomposition, r: int | None = None) -> Decomposition:
    """Apply the nesting construction to each layer; the result is coarser than D."""
    if D.m != F.m:
        raise ValueError("layer counts differ")
    layers = [nest_layer(p, q) for p, q in zip(D.layers, F.layers)]
    params = DecompositionParams(F.params.r if r is None else r, F.params.alpha, F.m, mode="nested")
    return Decomposition(layers, params)


def padding_inheritance_violations(g: Graph, F: Decomposition, nested: Decomposition, r: int) -> int:
    """Count (v, i) with B(v, 2r) inside a Q_i-cluster but B(v, r) not inside a P'_i-cluster."""
    verts = np.arange(g.vertex_count, dtype=np.int64)
    bad = 0
    for q, p in zip(F.layers, nested.layers):
        big_ok = ~K.cut_flags(g.indptr, g.indices, q.cluster_of, 2 * int(r), verts)
        small_ok = ~K.cut_flags(g.indptr, g.indices, p.cluster_of, int(r), verts)
        bad += int((big_ok & ~small_ok).sum())
    return bad


def carve_layers(g: Graph, m: int, p: float, M: int, stream: Stream, pad: int,
                 classes: Sequence[np.ndarray] | None = None) -> Decomposition:
    """m independent ball carvings with tGeo(p, M) radii (no padding repair)."""
    n = g.vertex_count
    if M < 1 or p >= 1:
        layers = [Partition.singletons(n) for _ in range(m)]
    else:
        if classes is None:
            classes = make_color_classes(g, M)
        layers = []
        tg = TGeoParams(p, M)
        for i in range(m):
            order = layer_class_order(classes, i, m)
            centers = np.concatenate(order) if order else np.zeros(0, dtype=np.int64)
            t = tgeo_from_uniform(tg, stream.child(i).uniforms(np.arange(n)))
            layers.append(Partition.from_labels(K.carve_sweep(g.indptr, g.indices, centers, t)))
    return Decomposition(layers, DecompositionParams(pad, None, m, p=p, M=M, mode="carve"))


def nested_schedule(g: Graph, schedule: EmbeddingSchedule, phase: int, seed: int,
                    budget: int | None = None, provider: Callable | None = None,
                    attempt: int = 0) -> tuple[list[Decomposition], list[dict]]:
    """C_0 at scale r_0, then C_k = nest(C_{k-1}, decomposition padded at 2 r_k).

    Returns the chain and one report per scale. D_n = C_{2n}, F_n = C_{2n+1}.
    """
    rs = schedule.scales[phase]
    chain: list[Decomposition] = []
    reports = []
    for k, r in enumerate(rs):
        pad = int(math.floor(r)) if k == 0 else int(math.floor(2 * r))
        M, p = schedule.carve_M[phase][k], schedule.carve_p[phase][k]
        stream = Stream(seed, CARVE_TAG, phase, k, attempt)
        if provider is not None:
            src = provider(phase, k, pad, M, p)
        elif schedule.build == "solve" and M >= 1 and p < 1:
            params = DecompositionParams(pad, schedule.alpha, schedule.m, b=schedule.b, p=p, M=M)
            src, _ = build_padded(g, params, seed=seed + 7919 * (4096 * attempt + 64 * phase + k + 1),
                                  budget=budget, mc_samples=0)
        else:
            src = carve_layers(g, schedule.m, p, M, stream, pad)
        rep = {"k": k, "r": r, "padding_radius": pad, "M": M, "p": p}
        counts = K.padded_counts(g.indptr, g.indices, src.labels(), pad, np.arange(g.vertex_count)) \
            if g.vertex_count else np.zeros(0, dtype=np.int64)
        rep["source_min_padded_layers"] = int(counts.min()) if len(counts) else schedule.m
        rep["source_padded_fraction"] = float((counts >= 1).mean()) if len(counts) else 1.0
        if k == 0:
            cur = src
        else:
            prev = chain[-1]
            bound_prev = max(p_.max_diameter(g) for p_ in prev.layers) if prev.layers else 0
            cur = nest(prev, src, int(math.floor(r)))
            rep["nesting_r_ge_D"] = bool(r >= bound_prev)
            rep["refines_previous"] = all(refines(prev, cur))
            rep["inheritance_violations"] = padding_inheritance_violations(g, src, cur, int(math.floor(r)))
        rep["max_cluster_diameter"] = max(p_.max_diameter(g) for p_ in cur.layers) if cur.layers else 0
        chain.append(cur)
        reports.append(rep)
    return chain, reports


# ---------------------------------------------------------------------------
# dumpling step


def boundary_depth(g: Graph, P: Partition, Q: Partition) -> np.ndarray:
    """dist in G/P from [u]_P to the boundary of [u]_Q (as a set of P-clusters), per vertex; -1 = no boundary."""
    if not refines([P], [Q])[0]:
        raise RefinementError("P does not refine Q")
    n = g.vertex_count
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    e = g.edges()
    qc = Q.cluster_of
    crossing = e[qc[e[:, 0]] != qc[e[:, 1]]]
    src = np.unique(P.cluster_of[crossing.ravel()])
    H, _ = quotient_graph(g, P)
    dist = K.multi_source_bfs(H.indptr, H.indices, src, -1)
    return dist[P.cluster_of]


def dumpling_psi(g: Graph, D: Decomposition | Sequence[Partition], F: Decomposition | Sequence[Partition],
                 t: Sequence[np.ndarray], depths: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """psi_i(u) = max(0, dist_{G/P_i}([u]_P, boundary_i([u]_Q)) - t_i([u]_Q)); (n, m) integer array."""
    Pl = D.layers if isinstance(D, Decomposition) else list(D)
    Ql = F.layers if isinstance(F, Decomposition) else list(F)
    n = g.vertex_count
    out = np.zeros((n, len(Pl)), dtype=np.int64)
    for i, (P, Q) in enumerate(zip(Pl, Ql)):
        depth = boundary_depth(g, P, Q) if depths is None else depths[i]
        ti = np.asarray(t[i], dtype=np.int64)[Q.cluster_of]
        out[:, i] = np.where(depth < 0, 0, np.maximum(0, depth - ti))
    return out


class _PairScopes:
    def __init__(self, QU: np.ndarray, QV: np.ndarray):
        self.QU, self.QV = QU, QV

    def __len__(self) -> int:
        return len(self.QU)

    def __getitem__(self, c: int) -> np.ndarray:
        return np.concatenate([self.QU[c], self.QV[c]]).astype(np.int64)


class SeparationCSP(ConstraintSystem):
    """One uniform t per Q_i-cluster; A_{u,v} wants >= need coordinates with |Δ(phi+psi)| >= threshold."""

    def __init__(self, U, V, depths, qlabels, nq, phi, threshold, need, t_max):
        m = len(depths)
        offsets = np.concatenate([[0], np.cumsum(nq)]).astype(np.int64)
        self.offsets = offsets
        self.threshold, self.need = threshold, need
        self.DU = np.stack([d[U] for d in depths], axis=1).astype(np.int32) if m else np.zeros((len(U), 0), np.int32)
        self.DV = np.stack([d[V] for d in depths], axis=1).astype(np.int32) if m else np.zeros((len(U), 0), np.int32)
        self.QU = np.stack([offsets[i] + qlabels[i][U] for i in range(m)], axis=1).astype(np.int32) if m else self.DU
        self.QV = np.stack([offsets[i] + qlabels[i][V] for i in range(m)], axis=1).astype(np.int32) if m else self.DV
        self.PU = phi[U].astype(np.int64)
        self.PV = phi[V].astype(np.int64)
        self.domains = [UniformDomain(range(t_max + 1))]
        self.domain_of = np.zeros(int(offsets[-1]), dtype=np.int64)
        self.scopes = _PairScopes(self.QU, self.QV)
        # variable -> constraints incidence
        nv = int(offsets[-1])
        allv = np.concatenate([self.QU, self.QV], axis=1).ravel().astype(np.int64)
        cons = np.repeat(np.arange(len(U), dtype=np.int64), 2 * m)
        order = np.argsort(allv, kind="stable")
        self._inc_ptr = np.concatenate([[0], np.cumsum(np.bincount(allv, minlength=nv))]).astype(np.int64)
        self._inc = cons[order]

    def coord_hits(self, assignment, ids):
        du, dv = self.DU[ids], self.DV[ids]
        tu, tv = assignment[self.QU[ids]], assignment[self.QV[ids]]
        pu = np.where(du < 0, 0, np.maximum(0, du - tu))
        pv = np.where(dv < 0, 0, np.maximum(0, dv - tv))
        diff = np.abs(self.PU[ids] + pu - self.PV[ids] - pv)
        return (diff >= self.threshold).sum(axis=1)

    def violated(self, assignment, ids):
        return self.coord_hits(assignment, ids) < self.need

    def dependents(self, var_ids):
        parts = [self._inc[self._inc_ptr[v]:self._inc_ptr[v + 1]] for v in np.unique(var_ids).tolist()]
        return np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)

    def dependency_degree(self) -> int:
        """Upper bound: sum over scope variables of their constraint counts, minus the constraint itself."""
        if self.n_constraints == 0:
            return 0
        deg = np.diff(self._inc_ptr)
        tot = deg[self.QU].sum(axis=1) + deg[self.QV].sum(axis=1)
        return int(tot.max()) - 1


def enumerate_pairs(g: Graph, lo: float, hi: float, *, pairs: str = "auto", cutoff: int = 1_000_000,
                    seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
    """Pairs u < v with lo < dist <= hi by bounded BFS; strided sampling when requested or above cutoff."""
    n = g.vertex_count
    ilo, ihi = int(math.floor(lo)), int(math.floor(hi))
    empty = np.zeros(0, dtype=np.int64)
    if n == 0 or ihi <= ilo or ihi < 1:
        return empty, empty, empty, {"mode": "exhaustive", "stride": 1, "estimated_pairs": 0}
    verts = np.arange(n, dtype=np.int64)
    est = int((K.ball_sizes(g.indptr, g.indices, ihi, verts).sum()
               - K.ball_sizes(g.indptr, g.indices, ilo, verts).sum()) // 2)
    if pairs == "exhaustive":
        stride = 1
    elif pairs.startswith("sample:"):
        rate = float(pairs.split(":", 1)[1])
        if not 0 < rate <= 1:
            raise ValueError("sample rate must lie in (0, 1]")
        stride = max(1, round(1 / rate))
    elif pairs == "auto":
        stride = max(1, math.ceil(est / cutoff)) if est > cutoff else 1
    else:
        raise ValueError(f"unknown pair source {pairs!r}")
    offset = int(Stream(seed, PAIR_TAG).uniforms(np.array([0]))[0] * stride)
    U, V, Dd = K.pairs_in_range(g.indptr, g.indices, ilo, ihi, verts, stride, offset)
    return U, V, Dd, {"mode": "exhaustive" if stride == 1 else "sample", "stride": stride,
                      "estimated_pairs": est, "pairs": int(len(U))}


def lemma_hypotheses(g: Graph, D: Decomposition, F: Decomposition, *, R: float, alpha: float, beta: float,
                     gamma: float, eps: float, b: float, eta: float) -> dict:
    m = D.m
    h = {
        "1_order": eps < 1 < alpha < beta < gamma and b >= 1 and R >= 1,
        "2_r_gamma_eps_half_ge_64": R ** (gamma * eps / 2) >= 64,
        "3_r_gamma_minus_beta_b_ge_2": R ** ((gamma - beta) * b) >= 2,
        "4_lll_exponent": (1 - eta) * m * (beta / alpha - 1 - gamma * (1 - eps / 2)) >= 6 * gamma * b,
        "5_refines": all(refines(D, F)),
        "6_P_r_bounded": all(p.max_diameter(g) <= R for p in D.layers),
        "7_Q_r_beta_bounded": all(q.max_diameter(g) <= R ** beta for q in F.layers),
    }
    rad = int(math.floor(R ** (beta / alpha)))
    if g.vertex_count and m:
        counts = K.padded_counts(g.indptr, g.indices, F.labels(), rad, np.arange(g.vertex_count))
        h["8_strong_padding"] = bool((counts >= (1 - eta) * m).all())
        h["8_min_padded_layers"] = int(counts.min())
    else:
        h["8_strong_padding"] = True
    h["all"] = all(v for k, v in h.items() if isinstance(v, bool))
    return h


def dumpling_step(g: Graph, D: Decomposition, F: Decomposition, phi: np.ndarray, plan: StepPlan, *,
                  eps: float, eta: float, b: float, alpha: float, seed: int, budget: int | None = None,
                  pairs: str = "auto", cutoff: int = 1_000_000, deadline: float | None = None,
                  mc_samples: int = 8, attempt: int = 0, strict: bool = True) -> tuple[np.ndarray, SolveStats, dict]:
    """Choose t per Q-cluster by resampling so far pairs in the plan's interval separate; return psi.

    When the solver stops early, strict mode raises; otherwise t = 0 is used
    (psi is still a dumpling contraction, only the separation is lost).
    """
    if not all(refines(D, F)):
        raise RefinementError("D does not refine F")
    m = D.m
    depths = [boundary_depth(g, P, Q) for P, Q in zip(D.layers, F.layers)]
    qlabels = [Q.cluster_of for Q in F.layers]
    nq = [len(Q.clusters) for Q in F.layers]
    lo, hi = plan.interval
    U, V, Dd, pair_info = enumerate_pairs(g, lo, hi, pairs=pairs, cutoff=cutoff, seed=seed)
    need = (1 - eta) * m / 2
    report = {"plan": plan.to_json(), "pairs": pair_info, "need_coordinates": math.ceil(need - 1e-12),
              "hypotheses": lemma_hypotheses(g, D, F, R=plan.R, alpha=alpha, beta=plan.beta, gamma=plan.gamma,
                                             eps=eps, b=b, eta=eta)}
    if len(U) == 0:
        t = [np.zeros(k, dtype=np.int64) for k in nq]
        stats = SolveStats(converged=True, budget=0, variables=int(sum(nq)), constraints=0, stop_reason="no pairs")
        report["note"] = "no constrained pairs; t = 0"
        return dumpling_psi(g, D, F, t, depths), stats, report
    cs = SeparationCSP(U, V, depths, qlabels, nq, phi, plan.threshold, need, plan.t_max)
    sol, stats = mt_solve(cs, Stream(seed, STEP_TAG, plan.phase, plan.n, attempt), budget, deadline=deadline)
    if mc_samples:
        attach_lll(stats, estimate_lll_params(cs, samples=mc_samples,
                                              stream=Stream(seed, ESTIMATE_TAG, plan.phase, plan.n, attempt)))
    if sol is None:
        msg = (f"separation step (phase {plan.phase}, n={plan.n}) stopped ({stats.stop_reason}) "
               f"after {stats.resample_count} resamples")
        if strict:
            raise ConstructionFailed(msg, stats)
        report["best_effort"] = msg
        sol = np.zeros(cs.n_variables, dtype=np.int64)
    t = [sol[cs.offsets[i]:cs.offsets[i + 1]] for i in range(m)]
    psi = dumpling_psi(g, D, F, t, depths)
    # recheck condition (b) from psi itself
    diff = np.abs((phi[U] + psi[U]) - (phi[V] + psi[V]))
    hits = (diff >= plan.threshold).sum(axis=1)
    report["separation_recheck_ok"] = bool((hits >= need).all())
    return psi, stats, report


def is_dumpling_contraction(g: Graph, psi: np.ndarray, F: Decomposition | Sequence[Partition]) -> bool:
    """psi_i is a contraction vanishing on the boundary of every Q_i-cluster."""
    Ql = F.layers if isinstance(F, Decomposition) else list(F)
    e = g.edges()
    if len(e) == 0:
        return True
    if (np.abs(psi[e[:, 0]] - psi[e[:, 1]]) > 1).any():
        return False
    for i, Q in enumerate(Ql):
        q = Q.cluster_of
        cross = e[q[e[:, 0]] != q[e[:, 1]]].ravel()
        if (psi[cross, i] != 0).any():
            return False
    return True


# ---------------------------------------------------------------------------
# cocycles and embeddings


@dataclass
class Cocycle:
    """Integer vectors on oriented edges (u < v); values on other pairs come from path sums."""

    graph: Graph
    edges: np.ndarray
    deltas: np.ndarray

    @property
    def dim(self) -> int:
        return self.deltas.shape[1]

    def _edge_index(self):
        n = self.graph.vertex_count
        keys = self.edges[:, 0] * n + self.edges[:, 1]
        order = np.argsort(keys)
        return keys[order], order

    def edge_value(self, u: int, v: int) -> np.ndarray:
        n = self.graph.vertex_count
        keys, order = self._edge_index()
        a, b_, sign = (u, v, 1) if u < v else (v, u, -1)
        pos = np.searchsorted(keys, a * n + b_)
        if pos >= len(keys) or keys[pos] != a * n + b_:
            raise KeyError(f"({u}, {v}) is not an edge")
        return sign * self.deltas[order[pos]]

    def value(self, x: int, y: int) -> np.ndarray:
        """delta(x, y) as the signed sum along a shortest x-y path; raises if x, y are in different components."""
        if x == y:
            return np.zeros(self.dim, dtype=np.int64)
        g = self.graph
        adj = csr_matrix((np.ones(len(g.indices)), g.indices, g.indptr), shape=(g.vertex_count,) * 2)
        _, pred = breadth_first_order(adj, x, directed=False, return_predecessors=True)
        if pred[y] < 0:
            raise ValueError(f"{x} and {y} lie in different components")
        total = np.zeros(self.dim, dtype=np.int64)
        w = y
        while w != x:
            p = int(pred[w])
            total += self.edge_value(p, w)
            w = p
        return total


@dataclass
class GridEmbedding:
    """coords are relative to each component's basepoint; positions add per-component offsets."""

    coords: np.ndarray
    basepoints: np.ndarray
    component: np.ndarray
    offsets: np.ndarray
    schedule: EmbeddingSchedule | None = None

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def positions(self) -> np.ndarray:
        return self.coords + self.offsets[self.component]

    def to_tsv(self) -> str:
        pos = self.positions
        return "".join(f"{v}\t" + "\t".join(map(str, row.tolist())) + "\n" if len(row) else f"{v}\n"
                       for v, row in enumerate(pos))

    @classmethod
    def from_positions(cls, g: Graph, positions: np.ndarray) -> "GridEmbedding":
        positions = np.asarray(positions, dtype=np.int64)
        comp = g.component_labels
        base = np.array([c[0] for c in g.components()], dtype=np.int64)
        offsets = positions[base] if len(base) else np.zeros((0, positions.shape[1]), dtype=np.int64)
        return cls(positions - offsets[comp], base, comp, offsets)


def read_tsv(text: str, n: int | None = None) -> np.ndarray:
    """Parse 'v c_1 ... c_N' lines into an (n, N) array."""
    rows = {}
    dim = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            vals = [int(x) for x in parts]
        except ValueError:
            raise ValueError(f"line {lineno}: expected integers") from None
        if dim is None:
            dim = len(vals) - 1
        elif len(vals) - 1 != dim:
            raise ValueError(f"line {lineno}: expected {dim} coordinates")
        if vals[0] in rows:
            raise ValueError(f"line {lineno}: vertex {vals[0]} repeated")
        rows[vals[0]] = vals[1:]
    count = len(rows) if n is None else n
    if set(rows) != set(range(count)):
        raise ValueError("embedding must list every vertex exactly once")
    out = np.zeros((count, dim or 0), dtype=np.int64)
    for v, vals in rows.items():
        out[v] = vals
    return out


def component_offsets(g: Graph, coords: np.ndarray) -> np.ndarray:
    """Component c is shifted by c*(2W+1) along coordinate 0, W = max |coord|, so images stay apart."""
    k = g.component_count
    dim = coords.shape[1]
    off = np.zeros((k, dim), dtype=np.int64)
    if dim == 0 or k <= 1:
        return off
    W = int(np.abs(coords).max()) if coords.size else 0
    off[:, 0] = np.arange(k, dtype=np.int64) * (2 * W + 1)
    return off


def realize_cocycle(g: Graph, deltas: np.ndarray, edges: np.ndarray | None = None) -> GridEmbedding:
    """Integrate edge deltas along depth-first trees from each component's least vertex; check every edge.

    The first edge (in sorted order) whose delta disagrees with the
    integrated potentials is named in the error; with a DFS tree that is the
    closing edge of the offending cycle.
    """
    n = g.vertex_count
    if edges is None:
        edges = g.edges()
    deltas = np.asarray(deltas, dtype=np.int64)
    if deltas.ndim == 1:
        deltas = deltas[:, None]
    dim = deltas.shape[1]
    if n * dim > MAX_COORD_CELLS:
        raise ValueError(f"{n} x {dim} coordinates exceed the size limit")
    if len(edges) != len(deltas):
        raise ValueError("one delta per edge required")
    f = np.zeros((n, dim), dtype=np.int64)
    comps = g.components()
    base = np.array([c[0] for c in comps], dtype=np.int64)
    if len(edges):
        keys = edges[:, 0] * n + edges[:, 1]
        korder = np.argsort(keys)
        skeys = keys[korder]
        adj = csr_matrix((np.ones(len(g.indices)), g.indices, g.indptr), shape=(n, n))
        for b in base.tolist():
            order, pred = depth_first_order(adj, b, directed=False, return_predecessors=True)
            ch = order[1:]
            par = pred[ch]
            lo, hi = np.minimum(par, ch), np.maximum(par, ch)
            idx = korder[np.searchsorted(skeys, lo * n + hi)]
            sign = np.where(par < ch, 1, -1)[:, None]
            step = sign * deltas[idx]
            for v, p, s in zip(ch.tolist(), par.tolist(), step):
                f[v] = f[p] + s
        bad = np.flatnonzero((f[edges[:, 1]] - f[edges[:, 0]] != deltas).any(axis=1))
        if len(bad):
            u, v = map(int, edges[bad[0]])
            raise CocycleError(f"edge deltas are inconsistent around edge ({u}, {v})", (u, v))
    comp = g.component_labels
    return GridEmbedding(f, base, comp, component_offsets(g, f))


def coarse_embed(g: Graph, schedule: EmbeddingSchedule, seed: int, *, budget: int | None = None,
                 pairs: str = "auto", cutoff: int = 1_000_000, deadline: float | None = None,
                 mc_samples: int = 8, attempts: int = 1, strict: bool = True) -> tuple[GridEmbedding, dict]:
    """Run every phase's nested scales and dumpling steps, sum the edge increments, realize.

    With attempts > 1 a phase whose step fails is rebuilt from fresh
    decompositions (new substreams); every attempt is recorded in the report.
    With strict=False a phase that fails every attempt is rerun once in
    best-effort mode, so a (possibly non-separating) contraction is returned.
    """
    if attempts < 1:
        raise ValueError("attempts must be >= 1")
    n = g.vertex_count
    m = schedule.m
    N = schedule.dim
    if n * N > MAX_COORD_CELLS:
        raise ValueError(f"{n} vertices x {N} coordinates exceed the size limit")
    edges = g.edges()
    deltas = np.zeros((len(edges), N), dtype=np.int64)
    report = {"schedule": schedule.to_json(), "phases": [], "dim": N}
    for j in range(len(schedule.phases)):
        failures = []
        for a in range(attempts):
            try:
                inc, prep = _run_phase(g, schedule, j, seed, edges, a, budget=budget, pairs=pairs, cutoff=cutoff,
                                       deadline=deadline, mc_samples=mc_samples)
                break
            except ConstructionFailed as exc:
                failures.append({"attempt": a, "error": str(exc),
                                 "solve": exc.stats.to_json() if exc.stats is not None else None})
        else:
            if strict:
                report["phases"].append({"phase": j, "failed_attempts": failures})
                raise ConstructionFailed(f"phase {j} failed in {attempts} attempt(s): {failures[-1]['error']}",
                                         None, report)
            inc, prep = _run_phase(g, schedule, j, seed, edges, attempts - 1, budget=budget, pairs=pairs,
                                   cutoff=cutoff, deadline=deadline, mc_samples=mc_samples, strict=False)
            report["best_effort"] = True
        prep["failed_attempts"] = failures
        report["phases"].append(prep)
        deltas[:, j * m:(j + 1) * m] = inc
    emb = realize_cocycle(g, deltas, edges)
    emb.schedule = schedule
    return emb, report


def _run_phase(g, schedule, j, seed, edges, attempt, **kw):
    n, m = g.vertex_count, schedule.m
    chain, scale_reports = nested_schedule(g, schedule, j, seed, kw["budget"], attempt=attempt)
    kw.setdefault("strict", True)
    phi = np.zeros((n, m), dtype=np.int64)
    total = np.zeros((len(edges), m), dtype=np.int64)
    nonzero = np.zeros((len(edges), m), dtype=np.int64)
    steps_rep = []
    for plan in [s for s in schedule.steps() if s.phase == j]:
        D, F = chain[2 * plan.n], chain[2 * plan.n + 1]
        psi, stats, srep = dumpling_step(g, D, F, phi, plan, eps=schedule.eps, eta=schedule.eta, b=schedule.b,
                                         alpha=schedule.alpha, seed=seed, attempt=attempt, **kw)
        srep["dumpling_contraction"] = is_dumpling_contraction(g, psi, F)
        srep["constant_on_P"] = all(
            bool((np.diff(psi[c, i]) == 0).all()) for i, P in enumerate(D.layers) for c in P.clusters)
        srep["solve"] = stats.to_json()
        steps_rep.append(srep)
        if len(edges):
            inc = psi[edges[:, 1]] - psi[edges[:, 0]]
            nonzero += inc != 0
            total += inc
        phi = phi + psi
    if len(edges) and (nonzero > 1).any():
        raise AssertionError("an edge changed twice in one coordinate; the scales are not nested")
    return total, {"phase": j, "x": schedule.phases[j], "attempt": attempt, "scales": scale_reports,
                   "steps": steps_rep}


# ---------------------------------------------------------------------------
# verification and injectivity


@dataclass
class DistortionReport:
    dim: int
    max_edge_stretch: float
    contraction_ok: bool
    min_far_ratio: float | None
    worst_pair: list[int] | None
    R_emp: int
    R_emp_nonvacuous: bool
    max_distance: int
    injective: bool
    collisions: int
    excess_over_max_d_s: float
    s: int
    pairs: dict
    covered_intervals: list | None = None
    covered_lower_bound_ok: bool | None = None

    def to_json(self) -> dict:
        d = asdict(self)
        if d["min_far_ratio"] is not None and math.isinf(d["min_far_ratio"]):
            d["min_far_ratio"] = None
        return d


def verify_embedding(g: Graph, f: GridEmbedding | np.ndarray, eps: float, R_emp: int | None = None, *,
                     s: int = 0, sample: float | None = None, seed: int = 0,
                     intervals: Sequence[tuple[float, float]] | None = None) -> DistortionReport:
    """Recompute stretch, the far-pair ratio ||Δf||_inf / d^(1-eps), and injectivity from coordinates.

    R_emp, when not given, is the least R >= 1 such that every intra-component
    pair at distance >= R has ratio >= 1. `sample` (0 < rate < 1) restricts
    the pair scan to a seeded subset of sources.
    """
    pos = f.positions if isinstance(f, GridEmbedding) else np.asarray(f, dtype=np.int64)
    n = g.vertex_count
    dim = pos.shape[1] if pos.ndim == 2 else 0
    e = g.edges()
    stretch = float(np.abs(pos[e[:, 0]] - pos[e[:, 1]]).max()) if len(e) and dim else 0.0
    if sample is None or sample >= 1:
        sources = np.arange(n, dtype=np.int64)
        pair_info = {"mode": "exhaustive", "sources": n}
    else:
        u = Stream(seed, PAIR_TAG, 1).uniforms(np.arange(n))
        sources = np.flatnonzero(u < sample).astype(np.int64)
        pair_info = {"mode": "sample", "rate": sample, "sources": int(len(sources))}
    coords = pos if dim else np.zeros((n, 1), dtype=np.int64)
    if n:
        min_ratio, au, av, excess = K.embedding_pair_scan(g.indptr, g.indices, coords, 1.0 - eps, sources, int(s))
    else:
        min_ratio, au, av, excess = np.full(1, np.inf), np.full(1, -1), np.full(1, -1), 0.0
    finite = np.flatnonzero(np.isfinite(min_ratio))
    max_d = int(finite.max()) if len(finite) else 0
    bad = np.flatnonzero(min_ratio < 1)
    R = int(bad.max()) + 1 if R_emp is None and len(bad) else (1 if R_emp is None else int(R_emp))
    far = np.arange(len(min_ratio)) >= R
    far_vals = np.where(far, min_ratio, np.inf)
    k = int(np.argmin(far_vals)) if len(far_vals) else 0
    mfr = float(far_vals[k]) if len(far_vals) and np.isfinite(far_vals[k]) else None
    worst = [int(au[k]), int(av[k])] if mfr is not None else None
    if n:
        _, counts = np.unique(pos, axis=0, return_counts=True) if dim else (None, np.array([n]))
        collisions = int((counts - 1).sum())
    else:
        collisions = 0
    cov_ok = None
    if intervals is not None:
        cov_ok = True
        for lo, hi in intervals:
            ds = np.arange(len(min_ratio))
            sel = (ds > lo) & (ds <= hi) & np.isfinite(min_ratio)
            if sel.any() and (min_ratio[sel] < 1).any():
                cov_ok = False
    return DistortionReport(
        dim=dim, max_edge_stretch=stretch, contraction_ok=stretch <= 1,
        min_far_ratio=mfr, worst_pair=worst, R_emp=R, R_emp_nonvacuous=R <= max_d, max_distance=max_d,
        injective=collisions == 0, collisions=collisions, excess_over_max_d_s=float(excess), s=int(s),
        pairs=pair_info, covered_intervals=[list(iv) for iv in intervals] if intervals is not None else None,
        covered_lower_bound_ok=cov_ok,
    )


def digits_needed(colors: int, s: int) -> int:
    """Least k with (s+1)^k >= colors."""
    if s < 1:
        raise ValueError("s must be a positive integer")
    k, cap = 0, 1
    while cap < colors:
        cap *= s + 1
        k += 1
    return k


def injective_augment(g: Graph, base: GridEmbedding, R: int, s: int, b: float | None = None) -> tuple[GridEmbedding, dict]:
    """Append base-(s+1) digits of a proper coloring of G^R to the cocycle of `base`."""
    if R < 1:
        raise ValueError("R must be >= 1")
    n = g.vertex_count
    color = greedy_power_coloring(g, int(R)) if n else np.zeros(0, dtype=np.int64)
    colors = int(color.max()) + 1 if n else 0
    k = digits_needed(max(colors, 1), s)
    digits = np.zeros((n, k), dtype=np.int64)
    c = color.copy()
    for j in range(k):
        digits[:, j] = c % (s + 1)
        c //= s + 1
    e = g.edges()
    base_delta = base.coords[e[:, 1]] - base.coords[e[:, 0]] if len(e) else np.zeros((0, base.dim), dtype=np.int64)
    dig_delta = digits[e[:, 1]] - digits[e[:, 0]] if len(e) else np.zeros((0, k), dtype=np.int64)
    emb = realize_cocycle(g, np.concatenate([base_delta, dig_delta], axis=1), e)
    emb.schedule = base.schedule
    k_theory = math.ceil(b * math.log(R) / math.log(s + 1)) if b is not None and R > 1 else None
    return emb, {"R": int(R), "s": int(s), "colors": colors, "k": k, "k_theory": k_theory,
                 "greedy_within_theory_bound": None if k_theory is None else k <= k_theory}


def injective_embed(g: Graph, schedule: EmbeddingSchedule, s: int, seed: int, *, R: int | None = None,
                    base: tuple[GridEmbedding, dict] | None = None, **embed_kw) -> tuple[GridEmbedding, dict]:
    """coarse_embed, measure R_emp, then make the map injective with a coloring of G^R."""
    emb, rep = base if base is not None else coarse_embed(g, schedule, seed, **embed_kw)
    vr = verify_embedding(g, emb, schedule.eps)
    R_use = vr.R_emp if R is None else R
    out, irep = injective_augment(g, emb, max(1, R_use), s, schedule.b)
    return out, {"coarse": rep, "coarse_verify": vr.to_json(), "injective": irep}
