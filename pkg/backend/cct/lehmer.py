"""
Permutation coding
Lehmer rank/unrank over the factorial number system, O(n log n) via a Fenwick tree
"""

from math import factorial
from typing import List, Sequence, TypeVar

T = TypeVar("T")


class Fenwick:
    def __init__(self, n: int):
        self.n = n
        self.tree = [0] * (n + 1)
        for i in range(1, n + 1):
            self.add(i, 1)

    def add(self, i: int, delta: int) -> None:
        while i <= self.n:
            self.tree[i] += delta
            i += i & -i

    def prefix(self, i: int) -> int:
        total = 0
        while i > 0:
            total += self.tree[i]
            i -= i & -i
        return total

    def kth_unused(self, k: int) -> int:
        """1-based position of the (k+1)-th element still present."""
        left, right = 1, self.n
        while left < right:
            mid = (left + right) // 2
            if self.prefix(mid) > k:
                right = mid
            else:
                left = mid + 1
        return left


def bits_per_permutation(n: int) -> int:
    """floor(log2 n!), 0 for n < 2."""
    return (factorial(n).bit_length() - 1) if n >= 2 else 0


# 排列编号：返回 perm 在其元素全部排列中的字典序编号
def rank_permutation(perm: Sequence[T]) -> int:
    n = len(perm)
    index = {v: i for i, v in enumerate(sorted(perm))}
    if len(index) != n:
        raise ValueError("permutation elements must be distinct")
    fw = Fenwick(n)
    rank = 0
    for i, value in enumerate(perm):
        x = index[value] + 1
        rank += fw.prefix(x - 1) * factorial(n - 1 - i)
        fw.add(x, -1)
    return rank


def unrank_permutation(rank: int, values: Sequence[T]) -> List[T]:
    """Permutation of sorted(values) whose lexicographic rank is `rank`."""
    n = len(values)
    if not 0 <= rank < factorial(n):
        raise ValueError(f"rank {rank} outside 0..{factorial(n) - 1}")
    ordered = sorted(values)
    fw = Fenwick(n)
    result = []
    for i in range(n):
        f = factorial(n - 1 - i)
        digit, rank = divmod(rank, f)
        pos = fw.kth_unused(digit)
        fw.add(pos, -1)
        result.append(ordered[pos - 1])
    return result
