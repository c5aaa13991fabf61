"""Command-line frontend: ``gnnrerank {synth,rerank,eval,bench}``.

Any option can also be supplied through an environment variable named
``GNNRERANK_<OPTION>`` (upper case, dashes as underscores), e.g.
``GNNRERANK_THREADS=4``. Explicit flags win over the environment.

Exit status: 0 on success, 1 on usage errors, 2 on data errors.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import append_csv, run_bench
from .evaluation import evaluate
from .feature_io import (
    FeatureFormatError,
    IoFailure,
    SynthSpec,
    load_feature_set,
    synth_dataset,
    write_feature_set,
)
from .pipeline import MethodParams, run_method
from .ranking import METHODS, RankingResult

ENV_PREFIX = "GNNRERANK_"
RANKING_HEADER = ["query_id", "rank", "gallery_id", "score"]


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _add_method_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("method hyperparameters")
    g.add_argument("--k1", type=int, help="neighbors for the adjacency / reciprocal sets "
                                          "(default: floor(n / classes) when --classes is set)")
    g.add_argument("--k2", type=int, default=7, help="neighbors for propagation / expansion (7)")
    g.add_argument("--alpha", type=float, default=2.0, help="edge-weight exponent (2)")
    g.add_argument("--layers", type=int, default=2, help="message-passing rounds (2)")
    g.add_argument("--aggregator", choices=["sum", "mean", "max"], default="sum")
    g.add_argument("--lam", "--lambda", dest="lam", type=float, default=0.3,
                   help="k-reciprocal blend of original distance (0.3)")
    g.add_argument("--qe-k", type=int, help="query-expansion neighbors (default: --k2)")
    g.add_argument("--classes", type=int, help="class-count estimate used to derive k1")
    g.add_argument("--no-query-in-expansion", action="store_true",
                   help="AQE / alpha-QE: average gallery neighbors only")
    p.add_argument("--threads", type=int, default=1)


def _params(args) -> MethodParams:
    return MethodParams(k1=args.k1, k2=args.k2, alpha=args.alpha, layers=args.layers,
                        aggregator=args.aggregator, lam=args.lam, qe_k=args.qe_k,
                        n_classes=args.classes, include_query=not args.no_query_in_expansion)


def build_parser() -> _Parser:
    parser = _Parser(prog="gnnrerank", description="Graph-based re-ranking for image retrieval.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic query/gallery feature pair")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--queries-per-class", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("rerank", help="rank the gallery for every query")
    p.add_argument("--query", type=Path, required=True)
    p.add_argument("--gallery", type=Path, required=True)
    p.add_argument("--method", choices=METHODS, default="gnn")
    p.add_argument("--top", type=int, help="keep only the first N gallery items per query")
    p.add_argument("--out", type=Path, required=True, help="ranking CSV")
    _add_method_flags(p)

    p = sub.add_parser("eval", help="score a ranking CSV")
    p.add_argument("--ranking", type=Path, required=True)
    p.add_argument("--query", type=Path, required=True)
    p.add_argument("--gallery", type=Path, required=True)
    p.add_argument("--ks", type=int, nargs="+", default=[1, 5, 10])
    p.add_argument("--out", type=Path, help="EvalReport JSON")

    p = sub.add_parser("bench", help="time methods and append to a results CSV")
    p.add_argument("--query", type=Path, required=True)
    p.add_argument("--gallery", type=Path, required=True)
    p.add_argument("--methods", nargs="+", choices=METHODS, default=["gnn"])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", type=Path, required=True, help="results CSV (appended)")
    _add_method_flags(p)

    for sp_parser in sub.choices.values():
        _apply_env(sp_parser)
    return parser


def _apply_env(p: argparse.ArgumentParser) -> None:
    for action in p._actions:
        if not action.option_strings or action.dest in ("help",):
            continue
        key = ENV_PREFIX + action.dest.upper()
        if key not in os.environ:
            continue
        raw = os.environ[key]
        if action.nargs in ("+", "*"):
            conv = action.type or str
            action.default = [conv(v) for v in raw.split()]
        elif action.const is not None and action.nargs == 0:
            action.default = raw.lower() in ("1", "true", "yes")
        else:
            action.default = (action.type or str)(raw)
        action.required = False


def _load(path: Path):
    try:
        return load_feature_set(path)
    except (FeatureFormatError, IoFailure) as exc:
        raise DataError(str(exc)) from exc


def write_ranking_csv(rr: RankingResult, query, gallery, path: Path, top: int | None = None) -> None:
    limit = rr.indices.shape[1] if top is None else min(top, rr.indices.shape[1])
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RANKING_HEADER)
        for q in range(rr.n_queries):
            qid = query.ids[q]
            for r in range(limit):
                g = int(rr.indices[q, r])
                w.writerow([qid, r + 1, gallery.ids[g], f"{rr.scores[q, r]:.10f}"])


def read_ranking_csv(path: Path, query, gallery) -> RankingResult:
    gpos = {gid: i for i, gid in enumerate(gallery.ids)}
    lists: dict[str, list[tuple[int, int, float]]] = {qid: [] for qid in query.ids}
    try:
        with open(path, newline="", encoding="utf-8") as f:
            rows = csv.reader(f)
            if next(rows, None) != RANKING_HEADER:
                raise DataError(f"{path}: expected header {','.join(RANKING_HEADER)}")
            for lineno, row in enumerate(rows, start=2):
                if not row:
                    continue
                try:
                    qid, rank, gid, score = row
                    entry = (int(rank), gpos[gid], float(score))
                    lists[qid].append(entry)
                except (ValueError, KeyError):
                    raise DataError(f"{path}: line {lineno}: bad row {row!r}") from None
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    lengths = {len(v) for v in lists.values()}
    if len(lengths) != 1 or 0 in lengths:
        raise DataError(f"{path}: every query needs a ranking list of the same nonzero length")
    idx, scores = [], []
    for qid in query.ids:
        entries = sorted(lists[qid])
        idx.append([e[1] for e in entries])
        scores.append([e[2] for e in entries])
    return RankingResult(np.array(idx, dtype=np.intp), np.array(scores), method="")


def _cmd_synth(args) -> None:
    try:
        spec = SynthSpec(args.classes, args.per_class, args.dim, args.sigma,
                         args.queries_per_class, args.seed)
        q, g = synth_dataset(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    args.out.mkdir(parents=True, exist_ok=True)
    write_feature_set(q, args.out / "query.feat")
    write_feature_set(g, args.out / "gallery.feat")
    print(f"wrote {q.n} queries and {g.n} gallery items (d={q.d}) to {args.out}")


def _cmd_rerank(args) -> None:
    q, g = _load(args.query), _load(args.gallery)
    rr = run_method(args.method, q, g, _params(args), args.threads)
    write_ranking_csv(rr, q, g, args.out, args.top)
    print(f"{args.method}: ranked {g.n} gallery items for {q.n} queries "
          f"(phase1 {rr.timings.phase1_s:.3f}s, phase2 {rr.timings.phase2_s:.3f}s) -> {args.out}")


def _cmd_eval(args) -> None:
    q, g = _load(args.query), _load(args.gallery)
    rr = read_ranking_csv(args.ranking, q, g)
    report = evaluate(rr, q, g, args.ks)
    if args.out:
        args.out.write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.table())


def _cmd_bench(args) -> None:
    q, g = _load(args.query), _load(args.gallery)
    results = run_bench(q, g, args.methods, _params(args), args.repeats, args.threads)
    append_csv(results, args.out)
    for r in results:
        print(f"{r.method:<12} phase1 {r.phase1_s:8.3f}s  phase2 {r.phase2_s:8.3f}s  "
              f"total {r.total_s:8.3f}s  mAP {100 * r.map:6.2f}%  R@1 {100 * r.recall_at_1:6.2f}%")


COMMANDS = {"synth": _cmd_synth, "rerank": _cmd_rerank, "eval": _cmd_eval, "bench": _cmd_bench}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
