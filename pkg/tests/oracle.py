"""Naive dense transcriptions used as ground truth on small instances.

Everything here is written with explicit loops over items and Python sets,
sharing nothing with the library except the FeatureSet/RankingResult
containers and the score-quantization rule (a tie rule, not arithmetic).
"""
from __future__ import annotations

import math
import operator
from fractions import Fraction

import numpy as np

from gnnrerank.ranking import SCORE_DECIMALS, RankingResult


_SCALE = 10.0 ** SCORE_DECIMALS


def _q(x: float) -> float:
    # Same result as numpy.round: scale, round half to even, unscale.
    return round(x * _SCALE) / _SCALE + 0.0


def _rows(fs):
    return [np.array(r, dtype=np.float64) for r in fs.features]


def _dot(u, v):
    return sum(map(operator.mul, u, v))


def _cos(u, v):
    return float(np.dot(u, v)) / (math.sqrt(float(np.dot(u, u))) * math.sqrt(float(np.dot(v, v))))


def similarity(rows):
    """S[i][j] = <x_i, x_j> / (|x_i| |x_j|), one pair at a time."""
    rows = [r.tolist() for r in rows]
    norms = [math.sqrt(_dot(r, r)) for r in rows]
    n = len(rows)
    s = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            s[i][j] = _dot(rows[i], rows[j]) / (norms[i] * norms[j])
    return s


def orders(s):
    """Full neighbor order of every row: descending similarity, then index."""
    return [sorted(range(len(s)), key=lambda j: (-_q(s[i][j]), j)) for i in range(len(s))]


def _power(e, alpha):
    if alpha != int(alpha) and e < 0:
        e = 0.0
    return e ** alpha


def _unit(v):
    return v / math.sqrt(float(np.dot(v, v)))


def dense_propagate(h, nbrs, weights, alpha, layers, aggregator):
    """h_i <- unit(h_i + aggregate(w_ij^alpha * h_j for j in nbrs[i])), ``layers`` times."""
    n = len(h)
    h = [np.array(r, dtype=np.float64) for r in h]
    for _ in range(layers):
        new = []
        for i in range(n):
            msgs = [_power(w, alpha) * h[j] for j, w in zip(nbrs[i], weights[i])]
            if aggregator == "sum":
                agg = np.zeros(len(h[i]))
                for m in msgs:
                    agg = agg + m
            elif aggregator == "mean":
                agg = np.zeros(len(h[i]))
                for m in msgs:
                    agg = agg + m
                agg = agg / len(nbrs[i])
            else:
                agg = msgs[0]
                for m in msgs[1:]:
                    agg = np.maximum(agg, m)
            new.append(_unit(h[i] + agg))
        h = new
    return h


def gnn_features(query, gallery, k1, k2, alpha, layers, aggregator):
    rows = _rows(query) + _rows(gallery)
    n = len(rows)
    s = similarity(rows)
    order = orders(s)
    nbr1 = [order[i][:k1] for i in range(n)]
    a = np.zeros((n, n))
    for i in range(n):
        for j in nbr1[i]:
            a[i][j] = 1.0
    a_star = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            a_star[i][j] = (a[i][j] + a[j][i]) / 2
    h = [_unit(a_star[i].copy()) for i in range(n)]
    nbr2 = [order[i][:k2] for i in range(n)]
    w2 = [[s[i][j] for j in nbr2[i]] for i in range(n)]
    h = dense_propagate(h, nbr2, w2, alpha, layers, aggregator)
    return h, s


def oracle_gnn_rerank(query, gallery, cfg) -> RankingResult:
    h, _ = gnn_features(query, gallery, cfg.k1, cfg.k2, cfg.alpha, cfg.layers, cfg.aggregator)
    nq, ng = query.n, gallery.n
    lists, scores = [], []
    for q in range(nq):
        sc = [_q(_cos(h[q], h[nq + g])) for g in range(ng)]
        order = sorted(range(ng), key=lambda g: (-sc[g], g))
        lists.append(order)
        scores.append([sc[g] for g in order])
    return RankingResult(np.array(lists, dtype=np.intp), np.array(scores), "gnn")


def reciprocal(order, i, k):
    return {j for j in order[i][:k] if i in order[j][:k]}


def expanded_reciprocal(order, i, k1):
    base = reciprocal(order, i, k1)
    out = set(base)
    half = k1 // 2
    for g in base:
        rg = reciprocal(order, g, half) if half >= 1 else set()
        if len(base & rg) >= Fraction(2, 3) * len(rg):
            out |= rg
    return out


def kr_features(s, order, k1):
    n = len(s)
    F = [np.zeros(n) for _ in range(n)]
    for i in range(n):
        for g in expanded_reciprocal(order, i, k1):
            F[i][g] = math.exp(-(2 - 2 * s[i][g]))
    return F


def kr_expand(F, order, k2):
    out = []
    for i in range(len(F)):
        acc = np.zeros(len(F))
        for g in order[i][:k2]:
            acc = acc + F[g]
        out.append(acc / k2)
    return out


def jaccard(u, v):
    num = float(np.minimum(u, v).sum())
    den = float(np.maximum(u, v).sum())
    return 1 - num / den


def oracle_k_reciprocal(query, gallery, cfg) -> RankingResult:
    rows = _rows(query) + _rows(gallery)
    s = similarity(rows)
    nq, ng = query.n, gallery.n
    order = orders(s)
    F = kr_expand(kr_features(s, order, cfg.k1), order, cfg.k2)
    lists, scores = [], []
    for q in range(nq):
        dist = []
        for g in range(ng):
            dj = jaccard(F[q], F[nq + g])
            d = 2 - 2 * s[q][nq + g]
            dist.append(_q((1 - cfg.lam) * dj + cfg.lam * d))
        order = sorted(range(ng), key=lambda g: (dist[g], g))
        lists.append(order)
        scores.append([-dist[g] for g in order])
    return RankingResult(np.array(lists, dtype=np.intp), np.array(scores), "kreciprocal")


def oracle_cosine_rank(query, gallery) -> RankingResult:
    qs, gs = _rows(query), _rows(gallery)
    lists = []
    for u in qs:
        sc = [_q(_cos(u, v)) for v in gs]
        lists.append(sorted(range(len(gs)), key=lambda g: (-sc[g], g)))
    return RankingResult(np.array(lists, dtype=np.intp), np.zeros((len(qs), len(gs))), "none")


def oracle_query_expansion(query, gallery, k, alpha=0.0, include_query=True) -> RankingResult:
    qs, gs = _rows(query), _rows(gallery)
    lists = []
    for u in qs:
        sims = [_cos(u, v) for v in gs]
        top = sorted(range(len(gs)), key=lambda g: (-_q(sims[g]), g))[:k]
        acc = np.zeros_like(u)
        wsum = 0.0
        if include_query:
            acc = acc + _unit(u)
            wsum += 1.0
        for g in top:
            w = _power(sims[g], alpha)
            acc = acc + w * _unit(gs[g])
            wsum += w
        e = acc / wsum
        sc = [_q(_cos(e, v)) for v in gs]
        lists.append(sorted(range(len(gs)), key=lambda g: (-sc[g], g)))
    return RankingResult(np.array(lists, dtype=np.intp), np.zeros((len(qs), len(gs))), "aqe")


def oracle_average_precision(ranking, labels, query_label, query_camera, cameras) -> float:
    """Area under the stepwise precision-recall curve: sum of P(k) * dR(k)."""
    def is_junk(g):
        if labels[g] == -1:
            return True
        return query_camera != -1 and labels[g] == query_label and cameras[g] == query_camera

    good = [g for g in range(len(labels)) if labels[g] == query_label and not is_junk(g)]
    kept = [g for g in ranking if not is_junk(g)]
    total = len(good)
    area = 0.0
    prev_recall = 0.0
    hits = 0
    for k, g in enumerate(kept, start=1):
        if g in good:
            hits += 1
        recall = hits / total
        precision = hits / k
        area += precision * (recall - prev_recall)
        prev_recall = recall
    return area
