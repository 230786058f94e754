"""Constraint systems over independent random variables, solved by Moser-Tardos resampling."""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .carving import TGeoParams, tgeo_from_uniform
from .rng import Stream


class UniformDomain:
    """Uniform over a finite list of integer values."""

    def __init__(self, values: Sequence[int]):
        self.values = np.asarray(values, dtype=np.int64)
        if len(self.values) == 0:
            raise ValueError("empty domain")

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        k = len(self.values)
        return self.values[np.minimum((u * k).astype(np.int64), k - 1)]

    def probabilities(self) -> dict[int, float]:
        return {int(v): 1 / len(self.values) for v in self.values}

    def __repr__(self) -> str:
        return f"UniformDomain({self.values.tolist()})"


class TGeoDomain:
    """tGeo(p, M) on {0, ..., M}, sampled directly rather than by rational rounding."""

    def __init__(self, params: TGeoParams):
        self.params = params

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        return tgeo_from_uniform(self.params, u)

    def __repr__(self) -> str:
        return f"TGeoDomain(p={self.params.p}, M={self.params.M})"


@dataclass
class SolveStats:
    resample_count: int = 0
    converged: bool = False
    p_bound: float | None = None
    d_bound: int | None = None
    lll_condition_met: bool | None = None
    budget: int = 0
    variables: int = 0
    constraints: int = 0
    p_source: str | None = None
    stop_reason: str | None = None

    def to_json(self) -> dict:
        return asdict(self)


class ConstraintSystem:
    """Variables 0..n_variables-1 and constraints with explicit scopes.

    Subclasses implement `violated(assignment, ids)`; the predicate for a
    constraint may only read the variables in its scope. `on_update` is a
    hook for incremental caches and is called after each resampling.
    """

    #: analytic upper bound on sup_A P[A], when the construction supplies one
    p_analytic: float | None = None

    def __init__(self, domains: Sequence, domain_of: np.ndarray, scopes: Sequence[np.ndarray]):
        self.domains = list(domains)
        self.domain_of = np.asarray(domain_of, dtype=np.int64)
        self.scopes = [np.asarray(s, dtype=np.int64) for s in scopes]
        n = len(self.domain_of)
        for i, s in enumerate(self.scopes):
            if len(s) and (s.min() < 0 or s.max() >= n):
                raise ValueError(f"constraint {i} references a nonexistent variable")

    @property
    def n_variables(self) -> int:
        return len(self.domain_of)

    @property
    def n_constraints(self) -> int:
        return len(self.scopes)

    def sample(self, var_ids: np.ndarray, u: np.ndarray) -> np.ndarray:
        out = np.empty(len(var_ids), dtype=np.int64)
        dom = self.domain_of[var_ids]
        for k in np.unique(dom):
            sel = dom == k
            out[sel] = self.domains[k].from_uniform(u[sel])
        return out

    def violated(self, assignment: np.ndarray, ids: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def on_update(self, assignment: np.ndarray, var_ids: np.ndarray) -> None:
        pass

    def incidence(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR (indptr, constraint ids) mapping each variable to the constraints containing it."""
        cached = getattr(self, "_incidence", None)
        if cached is None:
            lens = np.array([len(s) for s in self.scopes], dtype=np.int64)
            vars_ = np.concatenate(self.scopes) if self.scopes else np.zeros(0, dtype=np.int64)
            cons = np.repeat(np.arange(self.n_constraints, dtype=np.int64), lens)
            order = np.argsort(vars_, kind="stable")
            indptr = np.zeros(self.n_variables + 1, dtype=np.int64)
            np.add.at(indptr, vars_ + 1, 1)
            cached = (np.cumsum(indptr), cons[order])
            self._incidence = cached
        return cached

    def dependents(self, var_ids: np.ndarray) -> np.ndarray:
        indptr, cons = self.incidence()
        parts = [cons[indptr[v]:indptr[v + 1]] for v in var_ids.tolist()]
        return np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)

    def dependency_degree(self) -> int:
        """max over A of |{A' != A : dom(A') ∩ dom(A) nonempty}|."""
        if self.n_constraints == 0:
            return 0
        lens = np.array([len(s) for s in self.scopes], dtype=np.int64)
        rows = np.repeat(np.arange(self.n_constraints), lens)
        cols = np.concatenate(self.scopes)
        a = sp.csr_matrix((np.ones(len(cols), dtype=np.int8), (rows, cols)),
                          shape=(self.n_constraints, self.n_variables))
        a.data[:] = 1
        share = (a @ a.T).tocsr()
        nnz = np.diff(share.indptr)
        own = (lens > 0).astype(np.int64)
        return int((nnz - own).max())


class PredicateSystem(ConstraintSystem):
    """Constraints given as Python predicates over the values of their scope (in scope order)."""

    def __init__(self, domains, domain_of, constraints: Sequence[tuple[Sequence[int], Callable[[np.ndarray], bool]]]):
        super().__init__(domains, domain_of, [np.asarray(s, dtype=np.int64) for s, _ in constraints])
        self.predicates = [pred for _, pred in constraints]

    def violated(self, assignment, ids):
        return np.array([bool(self.predicates[i](assignment[self.scopes[i]])) for i in ids.tolist()], dtype=bool)


def default_budget(cs: ConstraintSystem) -> int:
    return 1000 * (cs.n_variables + cs.n_constraints)


def mt_solve(cs: ConstraintSystem, stream: Stream, budget: int | None = None,
             trace: list | None = None, deadline: float | None = None) -> tuple[np.ndarray | None, SolveStats]:
    """Sequential Moser-Tardos: resample the smallest-index violated constraint until none remain.

    The k-th draw of variable v uses uniform index v + k * n_variables of
    `stream`, so the run is a deterministic function of the stream.
    Returns (assignment, stats); assignment is None when the budget (or the
    optional wall-clock `deadline`, in seconds) runs out.
    """
    stop_at = None if deadline is None else time.monotonic() + deadline
    if budget is None:
        budget = default_budget(cs)
    if budget < 1:
        raise ValueError("budget must be >= 1")
    n = cs.n_variables
    stats = SolveStats(budget=budget, variables=n, constraints=cs.n_constraints)
    draws = np.zeros(n, dtype=np.int64)
    all_vars = np.arange(n, dtype=np.int64)
    assignment = cs.sample(all_vars, stream.uniforms(all_vars))
    cs.on_update(assignment, all_vars)

    all_ids = np.arange(cs.n_constraints, dtype=np.int64)
    is_violated = cs.violated(assignment, all_ids) if cs.n_constraints else np.zeros(0, dtype=bool)
    heap = np.flatnonzero(is_violated).tolist()
    heapq.heapify(heap)
    while heap:
        c = heap[0]
        if not is_violated[c]:
            heapq.heappop(heap)
            continue
        if stats.resample_count >= budget:
            stats.stop_reason = "budget"
            break
        if stop_at is not None and time.monotonic() > stop_at:
            stats.stop_reason = "deadline"
            break
        heapq.heappop(heap)
        is_violated[c] = False
        scope = np.unique(cs.scopes[c])
        draws[scope] += 1
        assignment[scope] = cs.sample(scope, stream.uniforms(scope + draws[scope] * n))
        stats.resample_count += 1
        if trace is not None:
            trace.append(c)
        cs.on_update(assignment, scope)
        dirty = cs.dependents(scope)
        now = cs.violated(assignment, dirty)
        for d in dirty[now & ~is_violated[dirty]].tolist():
            heapq.heappush(heap, d)
        is_violated[dirty] = now

    final = cs.violated(assignment, all_ids) if cs.n_constraints else np.zeros(0, dtype=bool)
    stats.converged = not final.any()
    if stats.converged:
        stats.stop_reason = "solved"
    return (assignment if stats.converged else None), stats


def estimate_lll_params(cs: ConstraintSystem, p_bound: float | None = None, *,
                        samples: int = 0, stream: Stream | None = None,
                        confidence: float = 0.95) -> dict:
    """(p_bound, d_bound, lll_condition_met) for e * p * (d + 1) < 1.

    p comes from `p_bound`, else the system's analytic bound, else a Monte
    Carlo estimate (max over constraints of the violation frequency in
    `samples` independent full assignments, plus a one-sided normal margin).
    """
    d = cs.dependency_degree()
    source = "analytic"
    detail = {}
    if p_bound is None:
        p_bound = cs.p_analytic
    if p_bound is None and cs.n_constraints == 0:
        p_bound = 0.0
    if p_bound is None:
        if samples < 1 or stream is None:
            raise ValueError("no analytic bound: give samples and a stream for Monte Carlo")
        source = "monte_carlo"
        hits = np.zeros(cs.n_constraints, dtype=np.int64)
        all_vars = np.arange(cs.n_variables, dtype=np.int64)
        all_ids = np.arange(cs.n_constraints, dtype=np.int64)
        for s in range(samples):
            a = cs.sample(all_vars, stream.child(s).uniforms(all_vars))
            cs.on_update(a, all_vars)
            hits += cs.violated(a, all_ids)
        freq = hits.max() / samples
        z = _normal_quantile(confidence)
        p_bound = min(1.0, freq + z * math.sqrt(max(freq * (1 - freq), 1 / samples) / samples))
        detail = {"samples": samples, "confidence": confidence, "max_frequency": float(freq)}
    met = math.e * p_bound * (d + 1) < 1
    return {"p_bound": float(p_bound), "d_bound": int(d), "lll_condition_met": bool(met), "p_source": source, **detail}


def _normal_quantile(q: float) -> float:
    from scipy.stats import norm
    return float(norm.ppf(q))


def attach_lll(stats: SolveStats, params: dict) -> SolveStats:
    stats.p_bound = params["p_bound"]
    stats.d_bound = params["d_bound"]
    stats.lll_condition_met = params["lll_condition_met"]
    stats.p_source = params["p_source"]
    return stats
