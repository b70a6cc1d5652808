"""
Scoring a rewritten query by where its golden tools land
========================================================

A rewrite is good when the tools the query needs show up near the top of
the ranking.  The candidate score turns each golden tool's rank into a
reward inside the top ``n`` and a growing penalty outside it.
"""

from mtr.qscore import ScoreConfig, candidate_score, position_score
from mtr.retrieval import Ranking

###############################################################################
# The curve for n = 10: positive and decaying up to rank 10, negative after.
for idx in (1, 2, 5, 10, 11, 20, 50, 200):
    print(f"rank {idx:>3}: {position_score(idx, 10):+.6f}")

###############################################################################
# Rank 1 and rank 11 cancel exactly at n = 10.  That is a property of n = 10
# only; at n = 5 the first penalty is smaller than the top reward.
print(position_score(1, 10) + position_score(11, 10))
print(position_score(1, 5) + position_score(6, 5))

###############################################################################
# A candidate's score sums the per-tool values over its golden set.
ids = [f"t{i:02d}" for i in range(1, 31)]
ranking = Ranking.from_scores("some rewritten query", ids, range(30, 0, -1))
for golden in ({"t01"}, {"t01", "t02"}, {"t01", "t11"}, {"t25"}):
    cs = candidate_score(ranking, golden, ScoreConfig(n=10))
    print(sorted(golden), cs.golden_ranks, round(cs.total, 4))
