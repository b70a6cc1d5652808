from collections import Counter

from hypothesis import given, strategies as st

from mtr.rng import Rng, derive, splitmix64


def test_splitmix64_reference_vector():
    # first outputs of the canonical splitmix64 stream seeded with 0
    rng = Rng(0)
    assert rng.next_u64() == 0xE220A8397B1DCDAF
    assert rng.next_u64() == 0x6E789E6AA1B965F4
    assert splitmix64(0) == 0xE220A8397B1DCDAF


def test_derive_streams_differ():
    assert derive(42, 0) != derive(42, 1)
    assert derive(42, 0) == derive(42, 0)


@given(st.integers(0, 2**64 - 1), st.integers(1, 50))
def test_below_in_range(seed, n):
    rng = Rng(seed)
    assert all(0 <= rng.below(n) < n for _ in range(20))


@given(st.integers(0, 2**64 - 1), st.integers(0, 30), st.integers(0, 30))
def test_distinct(seed, n, k):
    k = min(n, k)
    got = Rng(seed).distinct(n, k)
    assert len(set(got)) == k and all(0 <= x < n for x in got)


def test_sample_roughly_uniform():
    rng = Rng(1)
    counts = Counter(rng.sample(range(5), 1)[0] for _ in range(5000))
    assert all(850 < c < 1150 for c in counts.values())
