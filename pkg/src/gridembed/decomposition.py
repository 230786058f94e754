"""Covers and padded decompositions: conversions, randomized construction, strengthening, checks."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import _kernels as K
from .carving import CarvingInput, TGeoParams, auto_M, carve_owners, make_color_classes
from .graph import Graph, Partition, boundary, power_graph, set_ball, set_distances
from .lll import ConstraintSystem, SolveStats, TGeoDomain, attach_lll, estimate_lll_params, mt_solve
from .rng import Stream

SOLVE_TAG = 0xB0
ESTIMATE_TAG = 0xB1


class ConstructionFailed(RuntimeError):
    """The resampling solver ran out of budget; `stats` says how far it got."""

    def __init__(self, message: str, stats: SolveStats, partial=None):
        super().__init__(message)
        self.stats = stats
        self.partial = partial


class CoverError(ValueError):
    def __init__(self, message: str, uncovered: np.ndarray):
        super().__init__(message)
        self.uncovered = uncovered


@dataclass
class DecompositionParams:
    r: int
    alpha: float | None
    m: int
    eta: float | None = None
    b: float | None = None
    p: float | None = None
    M: int | None = None
    theory_mode: bool = False
    mode: str = "override"
    thresholds: dict = field(default_factory=dict)

    @property
    def bound(self) -> float:
        """r^alpha, the cluster diameter bound (infinite when alpha is unset)."""
        return math.inf if self.alpha is None else self.r ** self.alpha

    def to_json(self) -> dict:
        return asdict(self)


def few_layer_params(b: float, eps: float, r: int) -> DecompositionParams:
    """m = floor(b)+1 layers, alpha = (1+eps) m/(m-b), tGeo parameters from the construction."""
    m = math.floor(b) + 1
    alpha = (1 + eps) * m / (m - b)
    need = max(9, (1600 * b ** 4) ** (1 / alpha), (8000 * alpha * b / eps) ** (2 / eps))
    p, M = _carving_params(b, alpha, r)
    return DecompositionParams(r, alpha, m, b=b, p=p, M=M, theory_mode=True, mode="theory-few",
                               thresholds={"r_required_gt": need, "r_ok": r > need})


def many_layer_params(b: float, eps: float, r: int) -> DecompositionParams:
    """ceil(6b/eps) layers, alpha = 1+eps, for 0 < eps <= 1/2."""
    if not 0 < eps <= 0.5:
        raise ValueError("the many-layer variant needs 0 < eps <= 1/2")
    m = math.ceil(6 * b / eps)
    alpha = 1 + eps
    need = (12000 * b / eps) ** (4 / eps)
    p, M = _carving_params(b, alpha, r)
    return DecompositionParams(r, alpha, m, b=b, p=p, M=M, theory_mode=True, mode="theory-many",
                               thresholds={"r_required_ge": need, "r_ok": r >= need})


def strong_layer_params(b: float, eps: float, eta: float, r: int) -> dict:
    """Layer count and radius threshold for (1-eta)-strong (r, 1+eps) decompositions."""
    return {
        "m": math.ceil(15 * b / (eta * eps)),
        "alpha": 1 + eps,
        "r_required_ge": (24000 * b / (eta * eps)) ** (8 / eps),
        "source_m_eps_half": math.ceil(12 * b / eps),
    }


def _carving_params(b: float, alpha: float, r: int) -> tuple[float, int]:
    inv_p = r ** alpha / (8 * alpha * b * math.log(r)) if r > 1 else 0.0
    if inv_p <= 1:
        return 1.0, 0
    p = 1 / inv_p
    return p, auto_M(b, p)


@dataclass
class Decomposition:
    layers: list[Partition]
    params: DecompositionParams

    @property
    def m(self) -> int:
        return len(self.layers)

    def labels(self) -> np.ndarray:
        return np.stack([p.cluster_of for p in self.layers]) if self.layers else np.zeros((0, 0), dtype=np.int64)

    def refines(self, other: "Decomposition") -> bool:
        return self.m == other.m and all(a.refines(b) for a, b in zip(self.layers, other.layers))

    def to_json(self) -> dict:
        return {"params": self.params.to_json(), "layers": [p.to_json() for p in self.layers]}

    @classmethod
    def from_json(cls, data: dict, n: int) -> "Decomposition":
        fields = {k: v for k, v in data["params"].items()}
        params = DecompositionParams(**fields)
        return cls([Partition.from_clusters(n, layer) for layer in data["layers"]], params)


@dataclass
class Cover:
    layers: list[list[np.ndarray]]
    r_disjoint: float
    D_bounded: float

    @property
    def m(self) -> int:
        return len(self.layers)

    def to_json(self) -> dict:
        return {"r": self.r_disjoint, "D": self.D_bounded,
                "layers": [[s.tolist() for s in layer] for layer in self.layers]}


# ---------------------------------------------------------------------------
# conversions


def padded_from_cover(g: Graph, cover: Cover, r: int, alpha: float | None = None) -> Decomposition:
    """Expand every cover set to B_G(C, r); uncovered vertices become singletons."""
    if alpha is not None and r >= 1 and r ** alpha < cover.D_bounded + 2 * r:
        raise ValueError(f"need r^alpha >= D + 2r, got {r ** alpha} < {cover.D_bounded + 2 * r}")
    n = g.vertex_count
    layers = []
    for sets in cover.layers:
        labels = np.full(n, -1, dtype=np.int64)
        for k, members in enumerate(sets):
            grown = set_ball(g, members, r) if len(members) else members
            if (labels[grown] >= 0).any():
                raise ValueError(f"expanded cover sets overlap; the layer is not {2 * r}-disjoint")
            labels[grown] = k
        free = np.flatnonzero(labels < 0)
        labels[free] = len(sets) + np.arange(len(free))
        layers.append(Partition.from_labels(labels))
    return Decomposition(layers, DecompositionParams(r, alpha, len(layers), mode="from-cover"))


def shrink_cluster(g: Graph, members: np.ndarray, radius: float) -> np.ndarray:
    """C minus the union of B(x, radius) over boundary vertices x of C."""
    edge = boundary(g, members)
    if len(edge) == 0:
        return members
    near = set_distances(g, edge, int(math.floor(radius)))
    return members[near[members] < 0]


def cover_from_padded(g: Graph, d: Decomposition, r: float | None = None, *, strict: bool = True) -> Cover:
    """Shrink every cluster away from its boundary by r/2, where the padding radius is r/2 + 1.

    Raises CoverError when the shrunken sets miss some vertex (the input was
    not padded enough), unless strict=False.
    """
    pad = d.params.r
    if r is None:
        r = 2 * (pad - 1)
    layers = []
    covered = np.zeros(g.vertex_count, dtype=bool)
    for part in d.layers:
        sets = []
        for members in part.clusters:
            s = shrink_cluster(g, members, r / 2)
            if len(s):
                sets.append(s)
                covered[s] = True
        layers.append(sets)
    D = (r / 2 + 1) ** d.params.alpha if d.params.alpha is not None else math.inf
    cover = Cover(layers, r, D)
    if strict and not covered.all():
        missing = np.flatnonzero(~covered)
        raise CoverError(f"{len(missing)} vertices are not covered, e.g. {int(missing[0])}", missing)
    return cover


# ---------------------------------------------------------------------------
# randomized construction


def layer_class_order(classes: Sequence[np.ndarray], layer: int, m: int, rotate: bool = True) -> list[np.ndarray]:
    """Color classes in the order layer `layer` processes them.

    With `rotate`, layer i starts at class floor(i*k/m) and wraps around, so
    the m carvings do not all place their boundaries in the same spots when
    most radii sit at the truncation point M. Each order is still a proper
    coloring of G^{2M}, so every layer remains an ordinary ball carving.
    """
    classes = list(classes)
    if not rotate or not classes:
        return classes
    s = (layer * len(classes)) // m
    return classes[s:] + classes[:s]


class PaddingCSP(ConstraintSystem):
    """Variables t_i(x) ~ tGeo(p, M), one per (layer i, vertex x), index i*n + x.

    Constraint u has scope B(u, M + r) in every layer and is violated iff
    B(u, r) is cut in all m carved partitions.
    """

    def __init__(self, g: Graph, m: int, r: int, params: TGeoParams, classes: Sequence[np.ndarray],
                 rotate: bool = True):
        self.g, self.m, self.r, self.tgeo = g, m, r, params
        n = g.vertex_count
        self.n = n
        self.layer_classes = [layer_class_order(classes, i, m, rotate) for i in range(m)]
        inputs = [CarvingInput(g, params.M, c, np.zeros(n, dtype=np.int64)) for c in self.layer_classes]
        self.centers = [inp.centers for inp in inputs]
        self.color = [inp.color for inp in inputs]
        scratch = np.full(n, -1, dtype=np.int64)
        balls = [K.bfs_bounded(g.indptr, g.indices, u, params.M + r, scratch)[0] for u in range(n)]
        scopes = [np.concatenate([b + i * n for i in range(m)]) for b in balls]
        super().__init__([TGeoDomain(params)], np.zeros(n * m, dtype=np.int64), scopes)
        self.owners = np.full((m, n), -1, dtype=np.int64)

    def on_update(self, assignment, var_ids):
        g, n = self.g, self.n
        t = assignment.reshape(self.m, n)
        layers = var_ids // n
        for i in np.unique(layers):
            changed = var_ids[layers == i] % n
            if len(changed) == n:
                self.owners[i] = K.carve_sweep(g.indptr, g.indices, self.centers[i], t[i])
            else:
                targets = set_ball(g, changed, self.tgeo.M)
                K.carve_owner_local(g.indptr, g.indices, targets, t[i], self.color[i], self.tgeo.M, self.owners[i])

    def violated(self, assignment, ids):
        return K.padded_counts(self.g.indptr, self.g.indices, self.owners, self.r, ids) == 0

    def dependents(self, var_ids):
        return set_ball(self.g, np.unique(var_ids % self.n), self.tgeo.M + self.r)

    def dependency_degree(self):
        if self.n == 0:
            return 0
        reach = 2 * (self.tgeo.M + self.r)
        sizes = K.ball_sizes(self.g.indptr, self.g.indices, reach, np.arange(self.n, dtype=np.int64))
        return int(sizes.max()) - 1


def build_padded(g: Graph, params: DecompositionParams, seed: int, budget: int | None = None,
                 *, mc_samples: int = 16, classes: Sequence[np.ndarray] | None = None,
                 deadline: float | None = None, rotate: bool = True) -> tuple[Decomposition, SolveStats]:
    """Solve the padding CSP by resampling, then carve each layer from its coordinate of t.

    On non-convergence raises ConstructionFailed whose `partial` holds the
    carving of the last assignment (bounded, but not padded everywhere).
    """
    if params.p is None or params.M is None:
        raise ValueError("carving parameters p and M must be set")
    n = g.vertex_count
    m, r = params.m, params.r
    if params.p >= 1 or params.M == 0:
        # degenerate carving: every ball has radius 0
        layers = [Partition.singletons(n) for _ in range(m)]
        ok = r == 0 or n == 0
        stats = SolveStats(converged=ok, budget=budget or 0, variables=n * m, constraints=n)
        if not ok:
            raise ConstructionFailed("degenerate carving parameters cannot pad r >= 1", stats)
        return Decomposition(layers, params), stats
    tgeo = TGeoParams(params.p, params.M)
    if classes is None:
        classes = make_color_classes(g, params.M)
    cs = PaddingCSP(g, m, r, tgeo, classes, rotate)
    lemma_ok = params.b is not None and params.p <= 1 / (5 * params.b) and r >= 9 \
        and params.M == auto_M(params.b, params.p)
    if lemma_ok:
        cs.p_analytic = min(1.0, (20 * r * params.p) ** m)
    stream = Stream(seed, SOLVE_TAG)
    t, stats = mt_solve(cs, stream, budget, deadline=deadline)
    partial = Decomposition([Partition.from_labels(o) for o in cs.owners], params)
    layers = []
    if t is not None:
        t = t.reshape(m, n)
        for i in range(m):
            owner = carve_owners(CarvingInput(g, params.M, cs.layer_classes[i], t[i]), validate=False)
            if not np.array_equal(owner, cs.owners[i]):
                raise AssertionError("incremental carving state diverged from a fresh carve")
            layers.append(Partition.from_labels(owner))
    if cs.p_analytic is not None or mc_samples > 0:
        attach_lll(stats, estimate_lll_params(cs, samples=mc_samples, stream=Stream(seed, ESTIMATE_TAG)))
    if t is None:
        raise ConstructionFailed(
            f"resampling stopped ({stats.stop_reason}) after {stats.resample_count} steps without a solution",
            stats, partial)
    return Decomposition(layers, params), stats


# ---------------------------------------------------------------------------
# strengthening


def strengthen(g: Graph, source: Decomposition | Callable[[int], Decomposition], r: int, eta: float,
               alpha: float | None = None, *, m: int | None = None, strict: bool = True) -> Decomposition:
    """Turn an m-layer padded decomposition into a (1-eta)-strong one with ceil(m/eta) layers.

    `source` is either a ready decomposition or a callable radius -> decomposition,
    called with the padding radius 2*N*r + 1 that yields a (4Nr, D)-cover.
    The layer count and the per-vertex padding count (N+1-m) do not depend on
    the source; cluster boundedness does. strict=False tolerates a source whose
    shrunken clusters fail to cover V.
    """
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    if m is None:
        if callable(source):
            raise ValueError("give m when source is a builder")
        m = source.m
    N = math.ceil(m / eta) - 1
    src = source(2 * N * r + 1) if callable(source) else source
    if src.m != m:
        raise ValueError(f"source has {src.m} layers, expected {m}")
    cover = cover_from_padded(g, src, strict=strict)
    n = g.vertex_count
    if n == 0:
        return Decomposition([Partition.singletons(0)] * (N + 1), DecompositionParams(r, alpha, N + 1, eta=eta))
    H = power_graph(g, 2 * r) if r >= 1 else g
    layer_dist = np.stack([
        set_distances(H, np.concatenate(sets) if sets else np.zeros(0, dtype=np.int64)) for sets in cover.layers
    ])
    families = []
    for i in range(N + 1):
        in_S = (layer_dist == i).any(axis=0)
        keep = np.flatnonzero(~in_S)
        families.append(_components(H, keep))
    out = padded_from_cover(g, Cover(families, 2 * r, math.inf), r)
    params = DecompositionParams(r, alpha, N + 1, eta=eta, mode="strengthened",
                                 thresholds={"source_padding_radius": src.params.r, "cover_r": cover.r_disjoint})
    return Decomposition(out.layers, params)


def _components(H: Graph, keep: np.ndarray) -> list[np.ndarray]:
    """Connected components of H[keep]."""
    if len(keep) == 0:
        return []
    mask = np.zeros(H.vertex_count, dtype=bool)
    mask[keep] = True
    e = H.edges()
    e = e[mask[e[:, 0]] & mask[e[:, 1]]]
    pos = np.full(H.vertex_count, -1, dtype=np.int64)
    pos[keep] = np.arange(len(keep))
    k = len(keep)
    adj = csr_matrix((np.ones(len(e)), (pos[e[:, 0]], pos[e[:, 1]])), shape=(k, k))
    _, lab = connected_components(adj, directed=False)
    order = np.argsort(lab, kind="stable")
    bounds = np.searchsorted(lab[order], np.arange(lab.max() + 2))
    return [keep[order[bounds[c]:bounds[c + 1]]] for c in range(lab.max() + 1)]


# ---------------------------------------------------------------------------
# verification


def verify_padded(g: Graph, d: Decomposition, r: int | None = None, bound: float | None = None) -> dict:
    """Recompute diameters and padding counts directly from the definitions."""
    r = d.params.r if r is None else r
    bound = d.params.bound if bound is None else bound
    n = g.vertex_count
    layers_ok = True
    max_diam = 0
    for p in d.layers:
        try:
            p.validate()
        except ValueError:
            layers_ok = False
        diam = K.cluster_diameters(g.indptr, g.indices, p.cluster_of, len(p.clusters))
        if len(diam):
            max_diam = math.inf if (diam < 0).any() else max(max_diam, int(diam.max()))
    counts = K.padded_counts(g.indptr, g.indices, d.labels(), int(r), np.arange(n, dtype=np.int64)) \
        if n and d.m else np.zeros(n, dtype=np.int64)
    hist = np.bincount(counts, minlength=d.m + 1)
    min_layers = int(counts.min()) if n else d.m
    return {
        "layers": d.m,
        "r": r,
        "partitions_ok": layers_ok,
        "max_cluster_diameter": max_diam,
        "diameter_bound": bound,
        "bounded_ok": layers_ok and max_diam <= bound,
        "padded_layers_histogram": {str(k): int(v) for k, v in enumerate(hist)},
        "min_padded_layers": min_layers,
        "padded_ok": min_layers >= 1,
        "strong_eta_achieved": 1 - min_layers / d.m if d.m else None,
    }


def verify_cover(g: Graph, cover: Cover) -> dict:
    """Check r-disjointness, D-boundedness and coverage by brute force."""
    n = g.vertex_count
    covered = np.zeros(n, dtype=bool)
    disjoint = True
    max_diam = 0
    r = cover.r_disjoint
    for sets in cover.layers:
        labels = np.full(n, -1, dtype=np.int64)
        for k, s in enumerate(sets):
            if (labels[s] >= 0).any():
                disjoint = False
            labels[s] = k
            covered[s] = True
        for k, s in enumerate(sets):
            near = set_distances(g, s, int(math.floor(r)))
            hit = labels[near >= 0]
            if ((hit >= 0) & (hit != k)).any():
                disjoint = False
        full = labels.copy()
        free = np.flatnonzero(full < 0)
        full[free] = len(sets) + np.arange(len(free))
        diam = K.cluster_diameters(g.indptr, g.indices, full, len(sets) + len(free))
        if len(sets):
            dd = diam[: len(sets)]
            max_diam = math.inf if (dd < 0).any() else max(max_diam, int(dd.max()))
    return {
        "layers": cover.m,
        "r": r,
        "D": cover.D_bounded,
        "r_disjoint_ok": disjoint,
        "max_set_diameter": max_diam,
        "bounded_ok": max_diam <= cover.D_bounded,
        "covers_ok": bool(covered.all()),
    }
