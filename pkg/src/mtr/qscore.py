"""Scoring query candidates by where their retrieval run puts the golden tools.

A golden tool at 1-based rank ``idx`` earns ``1 / log2(idx + 1.1)`` inside the
top ``n`` and ``-(idx - n) / log2(idx / n + 1)`` below it.  A candidate's total
is the sum over its golden tools.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .retrieval import Ranking, rank_of


@dataclass(frozen=True)
class ScoreConfig:
    n: int = 10

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")


@dataclass(frozen=True)
class CandidateScore:
    candidate_text: str
    golden_ranks: Mapping[str, int]
    total: float


def position_score(idx: int, n: int) -> float:
    if idx < 1 or n < 1:
        raise ValueError(f"idx and n must be >= 1, got idx={idx}, n={n}")
    if idx <= n:
        return 1.0 / math.log2(idx + 1.1)
    return -(idx - n) / math.log2(idx / n + 1.0)


def candidate_score(ranking: Ranking, golden: Iterable[str], cfg: ScoreConfig = ScoreConfig()) -> CandidateScore:
    # sorted so the float sum is independent of set iteration order
    ranks = {g: rank_of(ranking, g) for g in sorted(set(golden))}
    total = math.fsum(position_score(r, cfg.n) for r in ranks.values())
    return CandidateScore(ranking.query, ranks, total)


def order_candidates(scored: Sequence[CandidateScore]) -> list[CandidateScore]:
    """Best first; equal totals fall back to lexicographic text order."""
    return sorted(scored, key=lambda c: (-c.total, c.candidate_text))
