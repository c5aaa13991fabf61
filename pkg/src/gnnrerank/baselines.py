"""Reference re-ranking methods: cosine baseline, AQE, alpha-QE, k-reciprocal.

All neighborhoods are computed on the union of query and gallery items
(queries first) with the same top-k rule as the graph method: self included,
descending similarity, ties by ascending index. The "original distance"
between two items is the squared Euclidean distance of their unit-normalized
features, ``2 - 2 * cos``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._parallel import single_threaded_blas
from .feature_io import FeatureSet
from .gnn import edge_factors
from .ranking import PhaseTimings, RankingResult, rank_by_distance, rank_by_score
from .similarity import (
    DimensionMismatch,
    KOutOfRange,
    NeighborLists,
    _select_rows,
    knn,
    normalize_rows,
    top_k,
)


class ZeroDenominator(ValueError):
    pass


@dataclass(frozen=True)
class KReciprocalConfig:
    k1: int = 20
    k2: int = 6
    lam: float = 0.3

    def __post_init__(self):
        if self.k1 < 1 or self.k2 < 1:
            raise KOutOfRange("k1 and k2 must be positive")
        if self.k2 > self.k1:
            raise ValueError(f"k2={self.k2} must not exceed k1={self.k1}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")


def _normalized_pair(query: FeatureSet, gallery: FeatureSet) -> tuple[np.ndarray, np.ndarray]:
    if query.d != gallery.d:
        raise DimensionMismatch(f"query dim {query.d} != gallery dim {gallery.d}")
    return normalize_rows(query.features), normalize_rows(gallery.features)


def cosine_rank(query: FeatureSet, gallery: FeatureSet) -> RankingResult:
    """Initial ranking: gallery sorted by cosine similarity to each query."""
    t0 = time.perf_counter()
    qx, gx = _normalized_pair(query, gallery)
    with single_threaded_blas():
        s = qx @ gx.T
    result = rank_by_score(s, "none")
    result.timings = PhaseTimings(0.0, time.perf_counter() - t0)
    return result


# -- query expansion ---------------------------------------------------------

def _gallery_neighbors(qx, gx, k):
    if not 1 <= k <= gx.shape[0]:
        raise KOutOfRange(f"k={k} outside [1, {gx.shape[0]}]")
    with single_threaded_blas():
        s = qx @ gx.T
    return _select_rows(s, k)


def _rank_expanded(expanded, gx, method, t0):
    t1 = time.perf_counter()
    with single_threaded_blas():
        s = normalize_rows(expanded) @ gx.T
    result = rank_by_score(s, method)
    result.timings = PhaseTimings(t1 - t0, time.perf_counter() - t1)
    return result


def aqe(query: FeatureSet, gallery: FeatureSet, k: int, include_query: bool = True) -> RankingResult:
    """Average query expansion.

    Each query is replaced by the mean of itself and its top-k gallery
    neighbors (or of the neighbors alone with ``include_query=False``), then
    the gallery is ranked by cosine against the expanded query.
    """
    t0 = time.perf_counter()
    qx, gx = _normalized_pair(query, gallery)
    idx, _ = _gallery_neighbors(qx, gx, k)
    acc = qx.copy() if include_query else np.zeros_like(qx)
    for t in range(k):
        acc += gx[idx[:, t]]
    acc /= k + int(include_query)
    return _rank_expanded(acc, gx, "aqe", t0)


def alpha_qe(query: FeatureSet, gallery: FeatureSet, k: int, alpha: float = 3.0,
             include_query: bool = True) -> RankingResult:
    """Alpha-weighted query expansion: neighbor g weighted by cos(q, g)^alpha."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    t0 = time.perf_counter()
    qx, gx = _normalized_pair(query, gallery)
    idx, sims = _gallery_neighbors(qx, gx, k)
    w = edge_factors(sims, alpha)
    acc = qx * 1.0 if include_query else np.zeros_like(qx)
    wsum = np.full(qx.shape[0], 1.0 if include_query else 0.0)
    for t in range(k):
        acc += w[:, t, None] * gx[idx[:, t]]
        wsum += w[:, t]
    if np.any(wsum <= 0):
        raise ZeroDenominator("all expansion weights are zero for some query")
    acc /= wsum[:, None]
    return _rank_expanded(acc, gx, "alpha-qe", t0)


# -- k-reciprocal re-ranking ---------------------------------------------------

def _neighbor_lists(sim, k: int) -> np.ndarray:
    if isinstance(sim, NeighborLists):
        if not 1 <= k <= sim.k:
            raise KOutOfRange(f"k={k} outside [1, {sim.k}]")
        return sim.indices[:, :k]
    return top_k(sim, k).indices


def _reciprocal_mask(nbrs: np.ndarray) -> np.ndarray:
    """mask[i, t] is True iff i is among the k nearest of nbrs[i, t]."""
    n, k = nbrs.shape
    back = nbrs[nbrs]  # (n, k, k): neighbor lists of each neighbor
    return (back == np.arange(n)[:, None, None]).any(axis=2)


def _all_reciprocal(nbrs: np.ndarray) -> list[np.ndarray]:
    mask = _reciprocal_mask(nbrs)
    return [nbrs[i][mask[i]] for i in range(nbrs.shape[0])]


def _expand(r_k1: list[np.ndarray], r_half: list[np.ndarray]) -> list[np.ndarray]:
    out = []
    for r in r_k1:
        base = set(r.tolist())
        acc = set(base)
        for g in r:
            rg = r_half[g]
            if not len(rg):
                continue
            inter = len(base.intersection(rg.tolist()))
            if 3 * inter >= 2 * len(rg):
                acc.update(rg.tolist())
        out.append(np.array(sorted(acc), dtype=np.intp))
    return out


def reciprocal_set(sim, i: int, k: int) -> set[int]:
    """Items j with j in N(i, k) and i in N(j, k)."""
    nbrs = _neighbor_lists(sim, k)
    n = nbrs.shape[0]
    if not 1 <= k < n:
        raise KOutOfRange(f"k={k} outside [1, {n})")
    row = nbrs[i]
    return {int(j) for j in row if i in nbrs[j]}


def _half(k1: int) -> int:
    return k1 // 2


def _reciprocal_sets_for(nbrs_full: np.ndarray, k1: int):
    r1 = _all_reciprocal(nbrs_full[:, :k1])
    h = _half(k1)
    if h >= 1:
        rh = _all_reciprocal(nbrs_full[:, :h])
    else:
        # floor(k1 / 2) = 0: the half-size reciprocal sets are empty.
        rh = [np.empty(0, dtype=np.intp)] * nbrs_full.shape[0]
    return r1, rh


def expanded_reciprocal_set(sim, i: int, k1: int) -> set[int]:
    """R(i, k1) plus R(g, k1 // 2) for every g in R(i, k1) whose half-set
    overlaps R(i, k1) in at least two thirds of its members."""
    nbrs = _neighbor_lists(sim, k1)
    n = nbrs.shape[0]
    if not 1 <= k1 < n:
        raise KOutOfRange(f"k1={k1} outside [1, {n})")
    r1, rh = _reciprocal_sets_for(nbrs, k1)
    return {int(j) for j in _expand([r1[i]], rh)[0]}


def _features_from_sets(x: np.ndarray, sets: list[np.ndarray]) -> sp.csr_matrix:
    n = x.shape[0]
    lens = np.array([len(s) for s in sets])
    rows = np.repeat(np.arange(n), lens)
    cols = np.concatenate(sets) if n else np.empty(0, dtype=np.intp)
    cos = np.einsum("ij,ij->i", x[rows], x[cols])
    vals = np.exp(-(2.0 - 2.0 * cos))
    indptr = np.concatenate([[0], np.cumsum(lens)])
    return sp.csr_matrix((vals, cols, indptr), shape=(n, n))


def k_reciprocal_features(x: np.ndarray, k1: int, nbrs: np.ndarray | None = None) -> sp.csr_matrix:
    """All k-reciprocal feature rows for unit-norm items ``x`` as an n x n CSR."""
    n = x.shape[0]
    if not 1 <= k1 < n:
        raise KOutOfRange(f"k1={k1} outside [1, {n})")
    if nbrs is None:
        nbrs = knn(x, k1).indices
    r1, rh = _reciprocal_sets_for(nbrs, k1)
    return _features_from_sets(x, _expand(r1, rh))


def k_reciprocal_feature(sim, i: int, k1: int) -> sp.csr_matrix:
    """Row i of the k-reciprocal feature matrix: exp(-(2 - 2 S_ig)) on R*(i, k1)."""
    s = sim.values if hasattr(sim, "values") else np.asarray(sim)
    members = np.array(sorted(expanded_reciprocal_set(s, i, k1)), dtype=np.intp)
    vals = np.exp(-(2.0 - 2.0 * s[i, members]))
    n = s.shape[0]
    return sp.csr_matrix((vals, members, [0, len(members)]), shape=(1, n))


def local_query_expansion(F: sp.spmatrix, sim, k2: int) -> sp.csr_matrix:
    """F_i <- (1 / k2) * sum of F_g over g in N(i, k2)."""
    nbrs = _neighbor_lists(sim, k2)
    n = nbrs.shape[0]
    m = sp.csr_matrix((np.ones(n * k2), np.sort(nbrs, axis=1).ravel(),
                       np.arange(0, n * k2 + 1, k2)), shape=(n, n))
    out = sp.csr_matrix(m @ sp.csr_matrix(F)) / k2
    out = sp.csr_matrix(out)
    out.sort_indices()
    return out


def jaccard_distance(F: sp.spmatrix, n_query: int | None = None) -> np.ndarray:
    """Generalized Jaccard distance 1 - sum(min) / sum(max) between rows.

    With ``n_query`` the first ``n_query`` rows are compared against the
    remaining rows; otherwise all pairs of rows are compared.
    """
    F = sp.csr_matrix(F)
    if F.nnz and F.data.min() < 0:
        raise ValueError("Jaccard distance needs nonnegative features")
    if n_query is None:
        fq, fg = F, F
    else:
        fq, fg = F[:n_query], F[n_query:]
    gc = sp.csc_matrix(fg)
    ng = fg.shape[0]
    sq = np.asarray(fq.sum(axis=1)).ravel()
    sg = np.asarray(fg.sum(axis=1)).ravel()
    out = np.empty((fq.shape[0], ng))
    for q in range(fq.shape[0]):
        lo, hi = fq.indptr[q], fq.indptr[q + 1]
        cols, v = fq.indices[lo:hi], fq.data[lo:hi]
        sub = gc[:, cols]
        mins = np.minimum(sub.data, np.repeat(v, np.diff(sub.indptr)))
        smin = np.bincount(sub.indices, weights=mins, minlength=ng)
        smax = sq[q] + sg - smin
        if np.any(smax <= 0):
            raise ZeroDenominator(f"row {q} and some other row are both all-zero")
        out[q] = 1.0 - smin / smax
    return out


def k_reciprocal_rerank(query: FeatureSet, gallery: FeatureSet, cfg: KReciprocalConfig) -> RankingResult:
    """Rank by (1 - lam) * Jaccard distance + lam * original distance."""
    t0 = time.perf_counter()
    qx, gx = _normalized_pair(query, gallery)
    x = np.vstack([qx, gx])
    n = x.shape[0]
    if cfg.k1 >= n:
        raise KOutOfRange(f"k1={cfg.k1} must be < n={n}")
    nbrs = knn(x, cfg.k1).indices
    F = k_reciprocal_features(x, cfg.k1, nbrs)
    t1 = time.perf_counter()
    F = local_query_expansion(F, NeighborLists(nbrs, np.zeros(nbrs.shape)), cfg.k2)
    dj = jaccard_distance(F, qx.shape[0])
    with single_threaded_blas():
        d = 2.0 - 2.0 * (qx @ gx.T)
    final = (1.0 - cfg.lam) * dj + cfg.lam * d
    result = rank_by_distance(final, "kreciprocal")
    result.timings = PhaseTimings(t1 - t0, time.perf_counter() - t1)
    return result
