"""Two-phase wall-clock benchmark of the re-ranking methods.

Phase 1 is neighbor/graph construction, phase 2 is feature updating plus the
final ranking. Each method gets one discarded warm-up run, then ``repeats``
timed runs; the reported numbers come from the median run.
"""
from __future__ import annotations

import csv
import json
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from .evaluation import evaluate
from .feature_io import FeatureSet
from .pipeline import MethodParams, run_method
from .ranking import RankingResult

CSV_FIELDS = ["method", "n_query", "n_gallery", "dim", "k1", "k2", "alpha", "layers", "threads",
              "phase1_s", "phase2_s", "total_s", "map", "recall_at_1"]


@dataclass
class BenchResult:
    method: str
    n_query: int
    n_gallery: int
    dim: int
    phase1_s: float
    phase2_s: float
    total_s: float
    threads: int
    repeats: int
    per_repeat: list[float]
    params: MethodParams = field(default_factory=MethodParams)
    map: float = float("nan")
    recall_at_1: float = float("nan")
    ranking: RankingResult | None = field(default=None, repr=False)

    def csv_row(self) -> dict:
        p = self.params
        return {
            "method": self.method, "n_query": self.n_query, "n_gallery": self.n_gallery,
            "dim": self.dim, "k1": "" if p.k1 is None else p.k1, "k2": p.k2, "alpha": p.alpha,
            "layers": p.layers, "threads": self.threads,
            "phase1_s": f"{self.phase1_s:.6f}", "phase2_s": f"{self.phase2_s:.6f}",
            "total_s": f"{self.total_s:.6f}", "map": f"{self.map:.6f}",
            "recall_at_1": f"{self.recall_at_1:.6f}",
        }


def _median_run(runs: list[tuple[float, float, float]]) -> tuple[float, float, float]:
    order = sorted(range(len(runs)), key=lambda i: runs[i][2])
    mid = len(order) // 2
    picks = [order[mid]] if len(order) % 2 else [order[mid - 1], order[mid]]
    return tuple(float(np.mean([runs[i][j] for i in picks])) for j in range(3))


def run_bench(query: FeatureSet, gallery: FeatureSet, methods: Sequence[str],
              params: MethodParams | dict[str, MethodParams], repeats: int = 3,
              threads: int = 1, warmup: bool = True) -> list[BenchResult]:
    """Time each method; ``params`` may be shared or given per method."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    results = []
    for method in methods:
        p = params[method] if isinstance(params, dict) else params
        if method in ("gnn", "kreciprocal"):
            p = p.resolved(query.n + gallery.n)
        if warmup:
            run_method(method, query, gallery, p, threads)
        runs, ranking = [], None
        for _ in range(repeats):
            t0 = time.perf_counter()
            rr = run_method(method, query, gallery, p, threads)
            total = time.perf_counter() - t0
            runs.append((rr.timings.phase1_s, rr.timings.phase2_s, total))
            ranking = rr
        p1, p2, tot = _median_run(runs)
        report = evaluate(ranking, query, gallery, ks=(1,))
        results.append(BenchResult(
            method, query.n, gallery.n, query.d, p1, p2, tot, threads, repeats,
            [r[2] for r in runs], p, report.map, report.recall_at[1], ranking))
    return results


def machine_descriptor() -> dict:
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "recorded": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }


def append_csv(results: Sequence[BenchResult], path: str | Path) -> None:
    """Append result rows (header written for a new file) and refresh the
    machine descriptor stored alongside as ``<path>.machine.json``."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=CSV_FIELDS, lineterminator="\n")
        if new:
            w.writeheader()
        for r in results:
            w.writerow(r.csv_row())
    Path(str(path) + ".machine.json").write_text(json.dumps(machine_descriptor(), indent=2) + "\n")
