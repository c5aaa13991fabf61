"""Normalization, cosine similarity and exact top-k neighbor selection.

Neighbor order is by descending similarity with ties broken by ascending
index. Similarities are compared after rounding to ``SCORE_DECIMALS`` places
so that mathematically equal values tie regardless of summation order. A
row's own index is an eligible neighbor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._parallel import map_blocks, single_threaded_blas
from .feature_io import FeatureSet
from .ranking import quantize

ZERO_NORM = 1e-12


class ZeroVector(ValueError):
    pass


class KOutOfRange(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class NeighborLists:
    """``indices[i]`` holds the k nearest items of row i, best first."""

    indices: np.ndarray
    values: np.ndarray

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def __len__(self) -> int:
        return self.indices.shape[0]


def _as_array(x) -> np.ndarray:
    if isinstance(x, FeatureSet):
        return np.asarray(x.features, dtype=np.float64)
    if isinstance(x, SimilarityMatrix):
        return x.values
    return np.asarray(x, dtype=np.float64)


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """Return a float64 copy of ``x`` with unit-norm rows."""
    x = np.array(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(norms < ZERO_NORM)
    if bad.size:
        raise ZeroVector(f"row {bad[0]} has norm {norms[bad[0]]:.3g}")
    x /= norms[:, None]
    return x


def l2_normalize(fs: FeatureSet) -> FeatureSet:
    return fs.with_features(normalize_rows(fs.features))


def cosine_similarity_matrix(fs) -> SimilarityMatrix:
    """Dense cosine similarities of all row pairs of ``fs`` (FeatureSet or array)."""
    x = normalize_rows(_as_array(fs))
    with single_threaded_blas():
        s = x @ x.T
    # x @ x.T is not guaranteed bit-symmetric across BLAS builds.
    s = np.triu(s) + np.triu(s, 1).T
    return SimilarityMatrix(s)


def _select_rows(vals: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact top-k of each row of ``vals`` under the (value desc, index asc) rule."""
    m, n = vals.shape
    keys = quantize(vals)
    if k == n:
        idx = np.argsort(-keys, axis=1, kind="stable")
        return idx, np.take_along_axis(vals, idx, axis=1)
    part = np.argpartition(-keys, k - 1, axis=1)[:, :k]
    pkeys = np.take_along_axis(keys, part, axis=1)
    kth = pkeys.min(axis=1)
    # argpartition picks an arbitrary member of a tie group straddling the cut.
    straddle = np.flatnonzero((keys >= kth[:, None]).sum(axis=1) > k)
    for r in straddle:
        part[r] = np.argsort(-keys[r], kind="stable")[:k]
        pkeys[r] = keys[r, part[r]]
    order = np.lexsort((part, -pkeys), axis=1)
    idx = np.take_along_axis(part, order, axis=1)
    return idx, np.take_along_axis(vals, idx, axis=1)


def top_k(sim, k: int) -> NeighborLists:
    s = _as_array(sim)
    n = s.shape[0]
    if not 1 <= k <= n:
        raise KOutOfRange(f"k={k} outside [1, {n}]")
    idx, vals = _select_rows(s, k)
    return NeighborLists(idx, vals)


def knn(x: np.ndarray, k: int, threads: int = 1) -> NeighborLists:
    """Top-k cosine neighbors of unit-norm rows ``x`` without materializing S.

    Similarities are computed one row block at a time, so peak memory is
    O(block * n) instead of O(n^2).
    """
    n = x.shape[0]
    if not 1 <= k <= n:
        raise KOutOfRange(f"k={k} outside [1, {n}]")
    idx = np.empty((n, k), dtype=np.intp)
    vals = np.empty((n, k), dtype=np.float64)

    def work(b: slice):
        i, v = _select_rows(x[b] @ x.T, k)
        idx[b] = i
        vals[b] = v

    with single_threaded_blas():
        map_blocks(work, n, threads)
    return NeighborLists(idx, vals)
