"""Graph re-ranking: k-NN graph construction and parameter-free message passing.

Pipeline over the union U of query and gallery features (queries first):

1. cosine similarities S over U, k1 nearest neighbors per node -> 0/1 matrix A
2. A* = (A + A^T) / 2, entries 1.0 (mutual) or 0.5 (one-sided)
3. node features h_i = row i of A*, L2-normalized
4. propagation graph: out-edges i -> N(i, k2) weighted by S_ij
5. ``layers`` rounds of h_i <- normalize(h_i + aggregate_j(S_ij^alpha * h_j))
6. rank gallery nodes for each query node by cosine of the refined features
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._parallel import map_blocks, single_threaded_blas
from .feature_io import FeatureSet
from .ranking import PhaseTimings, RankingResult, rank_by_score
from .similarity import (
    DimensionMismatch,
    KOutOfRange,
    NeighborLists,
    ZeroVector,
    ZERO_NORM,
    knn,
    normalize_rows,
    top_k,
)

AGGREGATORS = ("sum", "mean", "max")
# H switches to a dense array once this fraction of entries is nonzero.
DENSE_THRESHOLD = 0.25


class EmptyRow(ValueError):
    pass


class NegativeWeightWithFractionalAlpha(RuntimeWarning):
    """Negative edge weight raised to a non-integer power; weight clamped to 0."""


@dataclass(frozen=True, eq=False)
class SparseGraph:
    """Weighted adjacency in canonical CSR form (column indices sorted per row)."""

    n: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    weights: np.ndarray
    symmetric: bool = False

    @classmethod
    def from_scipy(cls, m: sp.spmatrix, symmetric: bool = False) -> "SparseGraph":
        m = sp.csr_matrix(m, copy=True)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        return cls(m.shape[0], m.indptr.astype(np.int64), m.indices.astype(np.int64),
                   m.data.astype(np.float64), symmetric)

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.weights, self.col_indices, self.row_offsets), shape=(self.n, self.n))

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    def degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[lo:hi], self.weights[lo:hi]


@dataclass(frozen=True, eq=False)
class NodeFeatureMatrix:
    """n x n node features; ``values`` is a scipy CSR matrix or a dense array."""

    values: sp.csr_matrix | np.ndarray
    layer: int = 0

    @property
    def is_dense(self) -> bool:
        return isinstance(self.values, np.ndarray)

    def toarray(self) -> np.ndarray:
        return self.values if self.is_dense else self.values.toarray()

    def row_norms(self) -> np.ndarray:
        if self.is_dense:
            return np.linalg.norm(self.values, axis=1)
        return np.sqrt(np.asarray(self.values.multiply(self.values).sum(axis=1)).ravel())

    def density(self) -> float:
        n, m = self.values.shape
        nnz = np.count_nonzero(self.values) if self.is_dense else self.values.nnz
        return nnz / float(n * m)


@dataclass(frozen=True)
class GnnConfig:
    k1: int
    k2: int = 7
    alpha: float = 2.0
    layers: int = 2
    aggregator: str = "sum"

    def __post_init__(self):
        if self.k1 < 1 or self.k2 < 1:
            raise KOutOfRange(f"k1={self.k1}, k2={self.k2} must be positive")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.alpha < 0 or not math.isfinite(self.alpha):
            raise ValueError("alpha must be a finite nonnegative number")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}")
        if self.k2 > self.k1:
            warnings.warn(f"k2={self.k2} > k1={self.k1}; k2 is normally much smaller than k1",
                          stacklevel=3)

    def check_size(self, n: int) -> None:
        if self.k1 >= n or self.k2 >= n:
            raise KOutOfRange(f"k1={self.k1} and k2={self.k2} must be < n={n}")


def suggest_k1(n: int, c: int) -> int:
    """Neighbors per node from the average class size: floor(n / c) in [1, n - 1]."""
    if c < 1 or n < 1:
        raise ValueError("need n >= 1 and c >= 1")
    return max(1, min(n // c, n - 1))


def _check_k(k: int, n: int) -> None:
    if not 1 <= k <= n:
        raise KOutOfRange(f"k={k} outside [1, {n}]")


def adjacency_from_neighbors(indices: np.ndarray, n: int) -> SparseGraph:
    rows, k = indices.shape
    cols = np.sort(indices, axis=1).ravel().astype(np.int64)
    offsets = np.arange(0, rows * k + 1, k, dtype=np.int64)
    return SparseGraph(n, offsets, cols, np.ones(rows * k), symmetric=False)


def propagation_from_neighbors(nl: NeighborLists, k2: int) -> SparseGraph:
    n = len(nl)
    idx = nl.indices[:, :k2]
    w = nl.values[:, :k2]
    order = np.argsort(idx, axis=1)
    cols = np.take_along_axis(idx, order, axis=1).ravel().astype(np.int64)
    weights = np.take_along_axis(w, order, axis=1).ravel().astype(np.float64)
    offsets = np.arange(0, n * k2 + 1, k2, dtype=np.int64)
    return SparseGraph(n, offsets, cols, weights, symmetric=False)


def build_adjacency(sim, k1: int) -> SparseGraph:
    """0/1 adjacency with A[i, j] = 1 iff j is among the k1 nearest of i."""
    nl = top_k(sim, k1) if not isinstance(sim, NeighborLists) else sim
    n = nl.indices.shape[0]
    _check_k(k1, n)
    return adjacency_from_neighbors(nl.indices[:, :k1], n)


def symmetrize(a: SparseGraph) -> SparseGraph:
    m = a.to_scipy()
    return SparseGraph.from_scipy((m + m.T) * 0.5, symmetric=True)


def node_features(a_star: SparseGraph) -> NodeFeatureMatrix:
    if not a_star.symmetric:
        raise ValueError("node features are built from the symmetrized adjacency")
    deg = a_star.degrees()
    empty = np.flatnonzero(deg == 0)
    if empty.size:
        raise EmptyRow(f"node {empty[0]} has no neighbors")
    h = a_star.to_scipy()
    return NodeFeatureMatrix(_normalize_sparse(h), layer=0)


def build_propagation_graph(sim, k2: int) -> SparseGraph:
    nl = top_k(sim, k2) if not isinstance(sim, NeighborLists) else sim
    _check_k(k2, nl.indices.shape[0])
    return propagation_from_neighbors(nl, k2)


def edge_factors(weights: np.ndarray, alpha: float) -> np.ndarray:
    """Message weights e^alpha.

    For non-integer alpha, negative similarities are clamped to 0 first
    (a negative base would give NaN) and a warning is issued.
    """
    w = np.asarray(weights, dtype=np.float64)
    if float(alpha) != int(alpha) and np.any(w < 0):
        warnings.warn(
            f"{int(np.sum(w < 0))} negative edge weight(s) with alpha={alpha}; clamped to 0",
            NegativeWeightWithFractionalAlpha, stacklevel=3)
        w = np.maximum(w, 0.0)
    return np.power(w, float(alpha))


def _normalize_sparse(h: sp.csr_matrix) -> sp.csr_matrix:
    h = sp.csr_matrix(h)
    h.sort_indices()
    norms = np.sqrt(np.asarray(h.multiply(h).sum(axis=1)).ravel())
    bad = np.flatnonzero(norms < ZERO_NORM)
    if bad.size:
        raise ZeroVector(f"node feature {bad[0]} vanished during propagation")
    out = h.copy()
    out.data = out.data / np.repeat(norms, np.diff(out.indptr))
    return out


def _normalize_dense(h: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(h, axis=1)
    bad = np.flatnonzero(norms < ZERO_NORM)
    if bad.size:
        raise ZeroVector(f"node feature {bad[0]} vanished during propagation")
    return h / norms[:, None]


def _aggregate_block(h, nbr: np.ndarray, fac: np.ndarray, w_block: sp.csr_matrix, aggregator: str):
    """Aggregated messages for the rows covered by ``nbr``/``fac``/``w_block``."""
    dense = isinstance(h, np.ndarray)
    if aggregator in ("sum", "mean"):
        msg = w_block @ h
        if aggregator == "mean":
            msg = msg / nbr.shape[1]
        return msg
    acc = None
    for t in range(nbr.shape[1]):
        if dense:
            cand = fac[:, t, None] * h[nbr[:, t]]
            acc = cand if acc is None else np.maximum(acc, cand)
        else:
            cand = sp.csr_matrix(h[nbr[:, t]].multiply(fac[:, t, None]))
            acc = cand if acc is None else acc.maximum(cand)
    return acc


def propagate(h: NodeFeatureMatrix, g: SparseGraph, cfg: GnnConfig, threads: int = 1) -> NodeFeatureMatrix:
    """Run ``cfg.layers`` message-passing rounds over the propagation graph ``g``.

    Each round computes h_i + aggregate({e_ij^alpha * h_j : j in N(i, k2)}) for
    every node from the previous round's features, then L2-normalizes rows.
    ``mean`` divides the weighted sum by k2; ``max`` is elementwise.
    """
    deg = g.degrees()
    if np.any(deg != cfg.k2):
        raise ValueError(f"propagation graph must have exactly k2={cfg.k2} out-edges per node")
    n = g.n
    nbr = g.col_indices.reshape(n, cfg.k2)
    fac = edge_factors(g.weights, cfg.alpha).reshape(n, cfg.k2)
    w = sp.csr_matrix((fac.ravel(), g.col_indices, g.row_offsets), shape=(n, n))

    cur = h
    with single_threaded_blas():
        for _ in range(cfg.layers):
            vals = cur.values
            dense = cur.is_dense
            if not dense and cur.density() >= DENSE_THRESHOLD:
                vals = vals.toarray()
                dense = True

            def work(b: slice, vals=vals):
                msg = _aggregate_block(vals, nbr[b], fac[b], w[b], cfg.aggregator)
                return vals[b] + msg

            parts = map_blocks(work, n, threads)
            if dense:
                nxt = _normalize_dense(np.vstack(parts))
            else:
                nxt = _normalize_sparse(sp.vstack(parts, format="csr"))
            cur = NodeFeatureMatrix(nxt, cur.layer + 1)
    return cur


def _union(query: FeatureSet, gallery: FeatureSet) -> np.ndarray:
    if query.d != gallery.d:
        raise DimensionMismatch(f"query dim {query.d} != gallery dim {gallery.d}")
    return np.vstack([np.asarray(query.features, dtype=np.float64),
                      np.asarray(gallery.features, dtype=np.float64)])


def refined_scores(h: NodeFeatureMatrix, n_query: int) -> np.ndarray:
    """Cosine similarity of refined query rows against refined gallery rows."""
    vals = h.values
    hq, hg = vals[:n_query], vals[n_query:]
    if h.is_dense:
        with single_threaded_blas():
            return hq @ hg.T
    return (hq @ hg.T).toarray()


def gnn_rerank(query: FeatureSet, gallery: FeatureSet, cfg: GnnConfig, threads: int = 1) -> RankingResult:
    t0 = time.perf_counter()
    x = normalize_rows(_union(query, gallery))
    n = x.shape[0]
    cfg.check_size(n)
    nl = knn(x, max(cfg.k1, cfg.k2), threads)
    a = adjacency_from_neighbors(nl.indices[:, :cfg.k1], n)
    h0 = node_features(symmetrize(a))
    g = propagation_from_neighbors(nl, cfg.k2)
    t1 = time.perf_counter()
    h = propagate(h0, g, cfg, threads)
    result = rank_by_score(refined_scores(h, query.n), "gnn")
    result.timings = PhaseTimings(t1 - t0, time.perf_counter() - t1)
    return result
