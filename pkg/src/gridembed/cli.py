"""gridembed command line: build, then verify, padded decompositions and grid embeddings.

Every subcommand prints a JSON report (RunConfig included) and exits with
0 on success, 1 when verification fails, 2 when the resampling solver
does not converge, 3 on I/O or configuration errors.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .carving import CarvingInput, auto_M, carve, cut_rate_experiment, make_color_classes, tgeo_from_uniform, TGeoParams
from .decomposition import (ConstructionFailed, Decomposition, DecompositionParams, build_padded, strengthen,
                            few_layer_params, many_layer_params, verify_padded)
from .embedding import (EmbeddingSchedule, GridEmbedding, coarse_embed, desk_preset, graph_diameter,
                        injective_augment, read_tsv, verify_embedding)
from .generators import generate
from .graph import Graph, GraphFormatError, GraphValidationError, growth_profile, load_graph
from .rng import Stream

EXIT_OK, EXIT_VERIFY, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2, 3
CARVE_TAG = 0xC1


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str
    input: str | None
    gen: str | None
    seed: int
    overrides: dict
    outputs: dict = field(default_factory=dict)
    mode: str | None = None
    budget: int | None = None
    pairs: str | None = None
    verbosity: int = 0
    version: str = __version__


# ---------------------------------------------------------------------------
# plumbing


def parse_overrides(text: str | None) -> dict:
    """'m=3,p=0.05,M=10' -> {'m': 3, 'p': 0.05, 'M': 10}; values parsed as int, float, or kept as text."""
    out: dict = {}
    if not text:
        return out
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        out[key.strip()] = _coerce(val.strip())
    return out


def _coerce(val: str):
    for conv in (int, float):
        try:
            return conv(val)
        except ValueError:
            pass
    if "/" in val:
        a, _, b = val.partition("/")
        try:
            return float(a) / float(b)
        except (ValueError, ZeroDivisionError):
            pass
    return val


def _take(ov: dict, allowed: dict) -> dict:
    unknown = set(ov) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown override(s) {sorted(unknown)}; allowed: {sorted(allowed)}")
    return {k: ov.get(k, v) for k, v in allowed.items()}


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "to_json"):
        return to_jsonable(obj.to_json())
    return obj


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_atomic(path: str, text: str) -> None:
    """Write via a temporary file in the target directory, then rename over the destination."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_text(path: str) -> str:
    try:
        if path == "-":
            return sys.stdin.read()
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def load_input(args) -> Graph:
    if args.gen:
        try:
            return generate(args.gen)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    try:
        return load_graph(read_text(args.input))
    except (GraphFormatError, GraphValidationError) as exc:
        raise ConfigError(f"{args.input}: {exc}") from None


def apply_threads() -> int | None:
    raw = os.environ.get("GRIDEMBED_THREADS")
    if not raw:
        return None
    try:
        k = int(raw)
    except ValueError:
        raise ConfigError("GRIDEMBED_THREADS must be a positive integer") from None
    if k < 1:
        raise ConfigError("GRIDEMBED_THREADS must be a positive integer")
    import numba
    k = min(k, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(k)
    return k


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# subcommands; each returns (exit code, report, {output name: text})


def cmd_growth(args, g, ov):
    prm = _take(ov, {"r_max": args.r_max})
    if g.vertex_count == 0:
        raise ConfigError("growth profile of an empty graph is undefined")
    prof = growth_profile(g, int(prm["r_max"]))
    return EXIT_OK, {"growth": prof.to_json()}, {}


def cmd_carve(args, g, ov):
    prm = _take(ov, {"M": 4, "p": 0.5})
    M, p = int(prm["M"]), float(prm["p"])
    n = g.vertex_count
    classes = make_color_classes(g, M) if M >= 1 else [np.arange(n)]
    t = tgeo_from_uniform(TGeoParams(p, M), Stream(args.seed, CARVE_TAG).uniforms(np.arange(n)))
    part = carve(CarvingInput(g, M, classes, t), validate=False)
    max_d = part.max_diameter(g)
    check = {"partition_ok": True, "max_cluster_diameter": max_d, "diameter_bound": 2 * M,
             "bounded_ok": max_d <= 2 * M}
    try:
        part.validate()
    except ValueError:
        check["partition_ok"] = False
    ok = check["partition_ok"] and check["bounded_ok"]
    report = {"params": {"M": M, "p": p, "color_classes": len(classes)}, "clusters": len(part.clusters),
              "verify": check}
    return (EXIT_OK if ok else EXIT_VERIFY), report, {"partition.json": dumps({"clusters": part.to_json()})}


def cmd_cutrate(args, g, ov):
    prm = _take(ov, {"b": 2.0, "p": 0.002, "M": "auto", "r": 10, "trials": 20, "growth_check_radius": None})
    rep = cut_rate_experiment(g, float(prm["b"]), float(prm["p"]), prm["M"], int(prm["r"]), int(prm["trials"]),
                              args.seed, graph_name=args.gen or args.input,
                              growth_check_radius=prm["growth_check_radius"])
    ok = rep["within_bound"] or not rep["preconditions_met"]
    return (EXIT_OK if ok else EXIT_VERIFY), {"cutrate": rep}, {}


def _decomposition_params(args, ov) -> DecompositionParams:
    if args.mode == "theory":
        prm = _take(ov, {"b": 2.0, "eps": 0.5, "r": 10, "layers": "few"})
        maker = {"few": few_layer_params, "many": many_layer_params}.get(prm["layers"])
        if maker is None:
            raise ConfigError("layers must be 'few' (floor(b)+1) or 'many' (ceil(6b/eps))")
        return maker(float(prm["b"]), float(prm["eps"]), int(prm["r"]))
    prm = _take(ov, {"m": 3, "p": 0.05, "M": 10, "r": 2, "alpha": None, "b": None})
    M = prm["M"]
    if M == "auto":
        if prm["b"] is None:
            raise ConfigError("M=auto needs b")
        M = auto_M(float(prm["b"]), float(prm["p"]))
    return DecompositionParams(int(prm["r"]), None if prm["alpha"] is None else float(prm["alpha"]), int(prm["m"]),
                               b=None if prm["b"] is None else float(prm["b"]), p=float(prm["p"]), M=int(M))


def cmd_decompose(args, g, ov):
    params = _decomposition_params(args, ov)
    try:
        d, stats = build_padded(g, params, args.seed, args.budget, deadline=args.deadline)
    except ConstructionFailed as exc:
        report = {"params": params.to_json(), "solve": exc.stats.to_json(), "error": str(exc)}
        if exc.partial is not None:
            report["partial_verify"] = verify_padded(g, exc.partial, bound=2 * params.M)
        return EXIT_SOLVER, report, {}
    bound = min(params.bound, 2 * params.M) if params.M else params.bound
    check = verify_padded(g, d, bound=bound)
    ok = check["partitions_ok"] and check["bounded_ok"] and check["padded_ok"]
    report = {"params": params.to_json(), "solve": stats.to_json(), "verify": check}
    return (EXIT_OK if ok else EXIT_VERIFY), report, {"decomposition.json": dumps(d.to_json())}


def cmd_strengthen(args, g, ov):
    prm = _take(ov, {"m": 3, "p": 0.05, "M": 10, "r": 1, "eta": 1 / 3, "alpha": None})
    m, r, eta = int(prm["m"]), int(prm["r"]), float(prm["eta"])
    info = {}

    def source(radius):
        sp = DecompositionParams(radius, None, m, p=float(prm["p"]), M=int(prm["M"]))
        d, stats = build_padded(g, sp, args.seed, args.budget, deadline=args.deadline)
        info["source_solve"] = stats.to_json()
        info["source_verify"] = verify_padded(g, d)
        return d

    try:
        d = strengthen(g, source, r, eta, prm["alpha"], m=m)
    except ConstructionFailed as exc:
        return EXIT_SOLVER, {"source_solve": exc.stats.to_json(), "error": str(exc)}, {}
    check = verify_padded(g, d, r)
    need = (1 - eta) * d.m
    check["required_padded_layers"] = need
    check["strong_ok"] = check["min_padded_layers"] >= need - 1e-9
    ok = check["partitions_ok"] and check["strong_ok"]
    report = {"params": d.params.to_json(), **info, "verify": check}
    return (EXIT_OK if ok else EXIT_VERIFY), report, {"decomposition.json": dumps(d.to_json())}


def _schedule(args, g, ov) -> tuple[EmbeddingSchedule, dict]:
    keys = {"b": 2.0, "eps": 0.5, "m": 4, "alpha": None, "beta": None, "eta": None, "x0": None, "phases": 2,
            "M": None, "p": None, "attempts": 4, "cutoff": 200_000, "s": 1, "R": None}
    prm = _take(ov, keys)
    diam = graph_diameter(g)
    b = float(prm["b"])
    eps = 0.25 if args.mode == "theory" and "eps" not in ov else float(prm["eps"])
    if args.mode == "theory":
        sch = EmbeddingSchedule.theory_mode(b, eps, diam)
    elif all(prm[k] is None for k in ("alpha", "beta", "eta", "x0", "M", "p")):
        sch = desk_preset(b, eps, diam, m=int(prm["m"]), phases=int(prm["phases"]))
    else:
        base = desk_preset(b, eps, diam, m=int(prm["m"]), phases=int(prm["phases"]))
        alpha = base.alpha if prm["alpha"] is None else float(prm["alpha"])
        beta = base.beta if prm["beta"] is None else float(prm["beta"])
        x0 = base.phases[0] if prm["x0"] is None else float(prm["x0"])
        nph = int(prm["phases"])
        M = base.carve_M[0][1] if prm["M"] is None else int(prm["M"])
        p = 0.005 if prm["p"] is None else float(prm["p"])
        sch = EmbeddingSchedule.desk(b, eps, diam, alpha=alpha, beta=beta, m=int(prm["m"]),
                                     eta=0.5 if prm["eta"] is None else float(prm["eta"]),
                                     phases=[x0 ** (alpha ** j) for j in range(nph)],
                                     carve_M=[[0, M]] * nph, carve_p=[[1.0, p]] * nph, max_scales=2)
    return sch, prm


DESK_STEP_BUDGET = 300  # resamples per step before a phase is rebuilt from fresh decompositions


def _embed(args, g, sch, prm):
    budget = args.budget if args.budget is not None else (DESK_STEP_BUDGET if args.mode == "desk" else None)
    return coarse_embed(g, sch, args.seed, budget=budget, pairs=args.pairs, cutoff=int(prm["cutoff"]),
                        deadline=args.deadline, attempts=int(prm["attempts"]))


def cmd_embed(args, g, ov):
    sch, prm = _schedule(args, g, ov)
    try:
        emb, rep = _embed(args, g, sch, prm)
    except ConstructionFailed as exc:
        return EXIT_SOLVER, {"error": str(exc), "partial": exc.partial}, {}
    vr = verify_embedding(g, emb, sch.eps, intervals=sch.covered_intervals())
    ok = vr.contraction_ok and vr.covered_lower_bound_ok is not False
    report = {"construction": rep, "verify": vr.to_json()}
    return (EXIT_OK if ok else EXIT_VERIFY), report, {"embedding.tsv": emb.to_tsv()}


def cmd_inject(args, g, ov):
    sch, prm = _schedule(args, g, ov)
    s = int(prm["s"])
    if s < 1:
        raise ConfigError("s must be a positive integer")
    try:
        base, rep = _embed(args, g, sch, prm)
    except ConstructionFailed as exc:
        return EXIT_SOLVER, {"error": str(exc), "partial": exc.partial}, {}
    coarse_v = verify_embedding(g, base, sch.eps)
    R = coarse_v.R_emp if prm["R"] is None else int(prm["R"])
    emb, irep = injective_augment(g, base, max(1, R), s, sch.b)
    vr = verify_embedding(g, emb, sch.eps, R_emp=R, s=s)
    ok = vr.injective and vr.excess_over_max_d_s <= 0 and (vr.min_far_ratio is None or vr.min_far_ratio >= 1)
    report = {"construction": rep, "coarse_verify": coarse_v.to_json(), "injective": irep, "verify": vr.to_json()}
    return (EXIT_OK if ok else EXIT_VERIFY), report, {"embedding.tsv": emb.to_tsv()}


def cmd_verify(args, g, ov):
    if bool(args.embedding) == bool(args.decomposition):
        raise ConfigError("verify needs exactly one of --embedding or --decomposition")
    if args.decomposition:
        prm = _take(ov, {"r": None, "bound": None})
        try:
            d = Decomposition.from_json(json.loads(read_text(args.decomposition)), g.vertex_count)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad decomposition file: {exc}") from None
        bound = None if prm["bound"] is None else float(prm["bound"])
        check = verify_padded(g, d, prm["r"], bound)
        ok = check["partitions_ok"] and check["bounded_ok"] and check["padded_ok"]
        return (EXIT_OK if ok else EXIT_VERIFY), {"verify": check}, {}
    prm = _take(ov, {"eps": 0.5, "R": None, "s": 0, "sample": None})
    try:
        pos = read_tsv(read_text(args.embedding), g.vertex_count)
    except ValueError as exc:
        raise ConfigError(f"bad embedding file: {exc}") from None
    R = None if prm["R"] is None else int(prm["R"])
    vr = verify_embedding(g, GridEmbedding.from_positions(g, pos), float(prm["eps"]), R, s=int(prm["s"]),
                          sample=prm["sample"], seed=args.seed)
    lower_ok = vr.R_emp_nonvacuous if R is None else (vr.min_far_ratio is None or vr.min_far_ratio >= 1)
    stretch_ok = vr.contraction_ok if vr.s <= 1 else vr.excess_over_max_d_s <= 0
    ok = stretch_ok and vr.injective and lower_ok
    return (EXIT_OK if ok else EXIT_VERIFY), {"verify": vr.to_json(), "lower_bound_ok": lower_ok}, {}


COMMANDS = {
    "growth": (cmd_growth, "growth function of the input graph"),
    "carve": (cmd_carve, "one seeded ball carving"),
    "cutrate": (cmd_cutrate, "Monte Carlo cut probability against 20rp"),
    "decompose": (cmd_decompose, "padded decomposition by resampling"),
    "strengthen": (cmd_strengthen, "strong padded decomposition from a plain one"),
    "embed": (cmd_embed, "coarse embedding into a grid"),
    "inject": (cmd_inject, "injective coarse embedding"),
    "verify": (cmd_verify, "check an embedding TSV or decomposition JSON"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gridembed", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"gridembed {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--input", help="edge-list file ('-' for stdin)")
        src.add_argument("--gen", help="generator family, e.g. grid:64, path:1000, tree:6,2")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="directory for output files (report.json plus artifacts)")
        p.add_argument("--override", help="comma-separated key=value parameters")
        p.add_argument("--mode", choices=["theory", "desk"], default="desk")
        p.add_argument("--budget", type=int, default=None, help="resampling budget per solve")
        p.add_argument("--deadline", type=float, default=None, help="wall-clock cap per solve, seconds")
        p.add_argument("--pairs", default="auto", help="exhaustive | sample:<rate> | auto")
        p.add_argument("-v", "--verbose", action="count", default=0)
        if name == "growth":
            p.add_argument("--r-max", type=int, default=20)
        if name == "verify":
            p.add_argument("--embedding", help="TSV file 'v c_1 ... c_N'")
            p.add_argument("--decomposition", help="decomposition JSON")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    fn = COMMANDS[args.subcommand][0]
    try:
        ov = parse_overrides(args.override)
        if args.budget is not None and args.budget < 1:
            raise ConfigError("--budget must be >= 1")
        if args.pairs != "auto" and args.pairs != "exhaustive" and not args.pairs.startswith("sample:"):
            raise ConfigError("--pairs must be exhaustive, sample:<rate> or auto")
        threads = apply_threads()
        g = load_input(args)
        config = RunConfig(args.subcommand, args.input, args.gen, args.seed, ov, mode=args.mode, budget=args.budget,
                           pairs=args.pairs, verbosity=args.verbose)
        code, report, files = fn(args, g, ov)
        if args.out:
            config.outputs = {k: os.path.join(args.out, k) for k in ["report.json", *files]}
        full = {"config": asdict(config), "graph": {"vertices": g.vertex_count, "edges": g.edge_count},
                "threads": threads, "exit_code": code, **report}
        text = dumps(full)
        if args.out:
            for name, body in files.items():
                write_atomic(os.path.join(args.out, name), body)
            write_atomic(os.path.join(args.out, "report.json"), text)
        sys.stdout.write(text)
        return code
    except ConfigError as exc:
        print(f"gridembed {args.subcommand}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"gridembed {args.subcommand}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"gridembed {args.subcommand}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
