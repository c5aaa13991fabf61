"""Method dispatch shared by the CLI and the benchmark harness."""
from __future__ import annotations

from dataclasses import dataclass, replace

from .baselines import KReciprocalConfig, alpha_qe, aqe, cosine_rank, k_reciprocal_rerank
from .feature_io import FeatureSet
from .gnn import GnnConfig, gnn_rerank, suggest_k1
from .ranking import METHODS, RankingResult


@dataclass(frozen=True)
class MethodParams:
    """Hyperparameters for every method; unset k1 comes from ``n_classes``."""

    k1: int | None = None
    k2: int = 7
    alpha: float = 2.0
    layers: int = 2
    aggregator: str = "sum"
    lam: float = 0.3
    qe_k: int | None = None
    n_classes: int | None = None
    include_query: bool = True

    def resolve_k1(self, n: int) -> int:
        if self.k1 is not None:
            return self.k1
        if self.n_classes is None:
            raise ValueError("k1 is required unless a class-count estimate is given")
        return suggest_k1(n, self.n_classes)

    def resolved(self, n: int) -> "MethodParams":
        return replace(self, k1=self.resolve_k1(n))


def run_method(method: str, query: FeatureSet, gallery: FeatureSet, params: MethodParams,
               threads: int = 1) -> RankingResult:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if method == "none":
        return cosine_rank(query, gallery)
    qe_k = params.qe_k if params.qe_k is not None else params.k2
    if method == "aqe":
        return aqe(query, gallery, qe_k, params.include_query)
    if method == "alpha-qe":
        return alpha_qe(query, gallery, qe_k, params.alpha, params.include_query)
    k1 = params.resolve_k1(query.n + gallery.n)
    if method == "gnn":
        cfg = GnnConfig(k1, params.k2, params.alpha, params.layers, params.aggregator)
        return gnn_rerank(query, gallery, cfg, threads)
    return k_reciprocal_rerank(query, gallery, KReciprocalConfig(k1, params.k2, params.lam))
