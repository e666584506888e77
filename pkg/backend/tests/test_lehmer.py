"""
Permutation coding tests

Rank/unrank against exhaustive enumeration.
"""

from __future__ import annotations

from itertools import permutations
from math import factorial

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cct.codecs.base import truncate_rank
from cct.lehmer import bits_per_permutation, rank_permutation, unrank_permutation

# =============================================================================
# Oracle equivalence
# =============================================================================


class TestEnumerationOracle:
    """itertools.permutations yields lexicographic order for sorted input."""

    @pytest.mark.parametrize("n", range(0, 7))
    def test_rank_matches_enumeration(self, n: int) -> None:
        for expected, perm in enumerate(permutations(range(n))):
            assert rank_permutation(perm) == expected

    @pytest.mark.parametrize("n", range(0, 7))
    def test_unrank_matches_enumeration(self, n: int) -> None:
        for rank, perm in enumerate(permutations(range(n))):
            assert tuple(unrank_permutation(rank, range(n))) == perm

    def test_arbitrary_values(self) -> None:
        values = ["tcp", "dns", "ip"]
        ordered = list(permutations(sorted(values)))
        for rank, perm in enumerate(ordered):
            assert rank_permutation(list(perm)) == rank


# =============================================================================
# Bounds
# =============================================================================


class TestBounds:

    @pytest.mark.parametrize("n,bits", [(0, 0), (1, 0), (2, 1), (3, 2), (4, 4), (5, 6), (6, 9), (10, 21)])
    def test_bits_per_permutation(self, n: int, bits: int) -> None:
        assert bits_per_permutation(n) == bits
        if n >= 2:
            assert 2 ** bits <= factorial(n) < 2 ** (bits + 1)

    def test_rank_out_of_range(self) -> None:
        with pytest.raises(ValueError):
            unrank_permutation(24, range(4))

    def test_repeated_values(self) -> None:
        with pytest.raises(ValueError, match="distinct"):
            rank_permutation([1, 1, 2])

    def test_truncate_keeps_top_bits(self) -> None:
        assert truncate_rank(5, 4) == 5
        assert truncate_rank(0b10111, 4) == 0b1011

    @given(st.permutations(list(range(40))))
    @settings(max_examples=50)
    def test_large_windows(self, perm) -> None:
        rank = rank_permutation(perm)
        assert unrank_permutation(rank, range(40)) == list(perm)
