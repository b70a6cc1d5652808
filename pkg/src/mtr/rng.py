"""Splitmix64 streams.

Every random decision in the package draws from these, so outputs are
bit-exact across platforms for a given 64-bit seed.
"""

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 finalisation of ``x`` (advance by the golden gamma, then mix)."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive(seed: int, i: int) -> int:
    """Independent child seed for stream ``i`` of ``seed``."""
    return splitmix64((seed ^ i) & MASK64)


class Rng:
    """Sequential splitmix64 generator."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased (rejection on the tail)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, population, k: int) -> list:
        """``k`` distinct elements in sampled order (partial Fisher-Yates)."""
        pool = list(population)
        if not 0 <= k <= len(pool):
            raise ValueError(f"cannot sample {k} from {len(pool)} items")
        for i in range(k):
            j = i + self.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def distinct(self, n: int, k: int) -> list[int]:
        """``k`` distinct integers from ``range(n)`` in O(k) (Floyd's algorithm), sorted."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot pick {k} distinct values below {n}")
        chosen: set[int] = set()
        for j in range(n - k, n):
            t = self.below(j + 1)
            chosen.add(j if t in chosen else t)
        return sorted(chosen)

    def choice(self, items):
        return items[self.below(len(items))]
