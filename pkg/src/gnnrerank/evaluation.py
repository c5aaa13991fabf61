"""Retrieval metrics: average precision, mAP and Recall@K with junk filtering.

Junk gallery items are dropped from a ranking before it is scored:
distractors (label -1) and, when both cameras are known (not -1), items with
the query's label taken by the query's camera.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .feature_io import FeatureSet
from .ranking import RankingResult


class NoValidPositives(ValueError):
    pass


@dataclass
class EvalReport:
    map: float
    recall_at: dict[int, float]
    per_query_ap: list[float]
    n_queries_evaluated: int
    n_queries_excluded: int = 0
    method: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"method": self.method, "map": self.map}
        for k in sorted(self.recall_at):
            out[f"recall@{k}"] = self.recall_at[k]
        out["n_queries_evaluated"] = self.n_queries_evaluated
        out["n_queries_excluded"] = self.n_queries_excluded
        out.update(self.extra)
        out["per_query_ap"] = self.per_query_ap
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        rows = [("method", self.method or "-"), ("mAP", f"{100 * self.map:.2f}%")]
        rows += [(f"Recall@{k}", f"{100 * v:.2f}%") for k, v in sorted(self.recall_at.items())]
        rows += [("queries evaluated", str(self.n_queries_evaluated)),
                 ("queries excluded", str(self.n_queries_excluded))]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def _filter(ranking, labels, query_label, query_camera, gallery_cameras):
    ranking = np.asarray(ranking, dtype=np.intp)
    labels = np.asarray(labels)
    cams = np.asarray(gallery_cameras)
    junk = labels == -1
    if query_camera != -1:
        junk |= (labels == query_label) & (cams == query_camera)
    good = (labels == query_label) & ~junk
    kept = ranking[~junk[ranking]]
    return kept, good


def average_precision(ranking: Sequence[int], labels, query_label: int, query_camera: int,
                      gallery_cameras) -> float:
    """Mean of precision@rank over the ranks of the valid positives.

    Positives absent from ``ranking`` contribute zero. Raises
    NoValidPositives when the gallery holds no valid match for the query.
    """
    if query_label == -1:
        raise NoValidPositives("query is a distractor")
    kept, good = _filter(ranking, labels, query_label, query_camera, gallery_cameras)
    n_pos = int(good.sum())
    if n_pos == 0:
        raise NoValidPositives("no valid positives for query")
    hit_ranks = np.flatnonzero(good[kept]) + 1
    precisions = np.arange(1, hit_ranks.size + 1) / hit_ranks
    return float(precisions.sum() / n_pos)


def first_hit_rank(ranking, labels, query_label, query_camera, gallery_cameras) -> int | None:
    kept, good = _filter(ranking, labels, query_label, query_camera, gallery_cameras)
    hits = np.flatnonzero(good[kept])
    return int(hits[0]) + 1 if hits.size else None


def evaluate(rr: RankingResult, query: FeatureSet, gallery: FeatureSet,
             ks: Sequence[int] = (1, 5, 10)) -> EvalReport:
    if rr.n_queries != query.n:
        raise ValueError(f"ranking has {rr.n_queries} lists for {query.n} queries")
    aps, firsts = [], []
    excluded = 0
    for q in range(query.n):
        args = (rr.indices[q], gallery.labels, int(query.labels[q]), int(query.cameras[q]),
                gallery.cameras)
        try:
            aps.append(average_precision(*args))
        except NoValidPositives:
            excluded += 1
            continue
        firsts.append(first_hit_rank(*args))
    m = len(aps)
    ks = sorted(set(int(k) for k in ks))
    recall = {k: (sum(1 for r in firsts if r is not None and r <= k) / m if m else 0.0) for k in ks}
    mean_ap = float(np.mean(aps)) if m else 0.0
    return EvalReport(mean_ap, recall, aps, m, excluded, rr.method)
