"""Per-query ranked gallery lists shared by every re-ranking method."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Scores are rounded to this many decimals before ordering. Mathematically tied
# scores can come out a few ulps apart depending on summation order; rounding
# makes them tie exactly so the ascending-index rule decides.
SCORE_DECIMALS = 10

METHODS = ("none", "gnn", "kreciprocal", "aqe", "alpha-qe")


@dataclass
class PhaseTimings:
    phase1_s: float = 0.0
    phase2_s: float = 0.0

    @property
    def total_s(self) -> float:
        return self.phase1_s + self.phase2_s


@dataclass
class RankingResult:
    """Row q of ``indices`` is query q's gallery ranking, best first.

    ``scores`` are the quantized ordering keys (higher is better); methods that
    rank by distance store the negated distance.
    """

    indices: np.ndarray
    scores: np.ndarray
    method: str = "none"
    timings: PhaseTimings = field(default_factory=PhaseTimings)

    @property
    def n_queries(self) -> int:
        return self.indices.shape[0]

    def lists(self) -> list[list[int]]:
        return self.indices.tolist()

    def same_order(self, other: "RankingResult") -> bool:
        return self.indices.shape == other.indices.shape and bool(np.array_equal(self.indices, other.indices))


def quantize(scores: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(scores, dtype=np.float64), SCORE_DECIMALS) + 0.0


def rank_by_score(scores: np.ndarray, method: str, timings: PhaseTimings | None = None) -> RankingResult:
    """Sort each row descending by quantized score, ties by ascending column."""
    keys = quantize(np.atleast_2d(scores))
    idx = np.argsort(-keys, axis=1, kind="stable")
    return RankingResult(idx, np.take_along_axis(keys, idx, axis=1), method,
                         timings or PhaseTimings())


def rank_by_distance(dist: np.ndarray, method: str, timings: PhaseTimings | None = None) -> RankingResult:
    keys = quantize(np.atleast_2d(dist))
    idx = np.argsort(keys, axis=1, kind="stable")
    return RankingResult(idx, 0.0 - np.take_along_axis(keys, idx, axis=1), method,
                         timings or PhaseTimings())
