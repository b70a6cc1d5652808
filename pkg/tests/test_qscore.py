import math

import pytest
from hypothesis import given, strategies as st

from mtr.qscore import CandidateScore, ScoreConfig, candidate_score, order_candidates, position_score
from mtr.retrieval import Ranking

# closed forms evaluated with mpmath at 40 digits
TOP = 0.9342395088803242760  # 1/log2(2.1)
AT_N = 0.2879779759681520935  # 1/log2(11.1)
AT_20 = -6.3092975357145743710  # -10/log2(3)


@pytest.mark.parametrize("idx, n, expected", [(1, 10, TOP), (11, 10, -TOP), (10, 10, AT_N), (20, 10, AT_20)])
def test_position_score_values(idx, n, expected):
    assert position_score(idx, n) == pytest.approx(expected, abs=1e-12)


def test_branch_symmetry_at_ten():
    assert abs(position_score(11, 10) + position_score(1, 10)) < 1e-12


def test_penalty_boundary_general_n():
    # -(1)/log2((n+1)/n + 1): equals -position_score(1, n) only when (n+1)/n == 1.1
    for n in (1, 5, 50):
        assert position_score(n + 1, n) == pytest.approx(-1 / math.log2(2 + 1 / n), abs=1e-15)


@pytest.mark.parametrize("n", [1, 5, 10, 50])
def test_strictly_decreasing_and_sign_split(n):
    values = [position_score(i, n) for i in range(1, 10001)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert all(v > 0 for v in values[:n]) and all(v < 0 for v in values[n:])


def test_discount_below_plain_dcg():
    assert all(1 / math.log2(i + 1.1) < 1 / math.log2(i + 1) for i in range(1, 10001))


@pytest.mark.parametrize("idx, n", [(0, 10), (1, 0), (-3, 5)])
def test_position_score_rejects(idx, n):
    with pytest.raises(ValueError):
        position_score(idx, n)


def _ranking(m=30):
    ids = [f"t{i:02d}" for i in range(1, m + 1)]
    return Ranking.from_scores("q", ids, [m - i for i in range(m)])


def test_candidate_score_cancels():
    assert candidate_score(_ranking(), {"t01", "t11"}, ScoreConfig(10)).total == pytest.approx(0.0, abs=1e-15)


def test_candidate_score_single():
    cs = candidate_score(_ranking(), {"t01"})
    assert cs.golden_ranks == {"t01": 1}
    assert cs.total == pytest.approx(TOP, abs=1e-12)


def test_candidate_score_missing_golden():
    with pytest.raises(KeyError):
        candidate_score(_ranking(), {"zz"})


@given(st.sets(st.integers(1, 30), min_size=1, max_size=5), st.randoms())
def test_candidate_score_order_invariant(ranks, rnd):
    golden = [f"t{r:02d}" for r in ranks]
    shuffled = golden[:]
    rnd.shuffle(shuffled)
    a = candidate_score(_ranking(), golden)
    b = candidate_score(_ranking(), shuffled)
    assert a.total == b.total
    assert a.total == pytest.approx(sum(position_score(r, 10) for r in ranks), abs=1e-12)


def _cs(text, total):
    return CandidateScore(text, {}, total)


def test_order_candidates():
    assert [c.total for c in order_candidates([_cs("a", 0.3), _cs("b", 0.9), _cs("c", -2.0)])] == [0.9, 0.3, -2.0]
    assert [c.candidate_text for c in order_candidates([_cs("zeta", 1.0), _cs("alpha", 1.0)])] == ["alpha", "zeta"]
    assert order_candidates([_cs("x", 1.0)]) == [_cs("x", 1.0)]


def test_score_config_validation():
    with pytest.raises(ValueError):
        ScoreConfig(0)
