"""Ranking primitives: strict step, descending ranks, query partitioning."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apranking.errors import StructuralError
from apranking.ranking import (
    QueryContext,
    RelevanceMatrix,
    ScoredList,
    descending_rank,
    heaviside,
    partition_query,
    query_contexts,
)


class TestHeaviside:
    def test_positive(self):
        assert heaviside(0.3) == 1.0

    def test_zero_is_zero(self):
        assert heaviside(0.0) == 0.0

    def test_negative(self):
        assert heaviside(-0.3) == 0.0

    def test_vectorized(self):
        np.testing.assert_array_equal(heaviside([-1.0, 0.0, 2.0]), [0.0, 0.0, 1.0])


class TestDescendingRank:
    def test_max_is_rank_one(self):
        assert descending_rank(0.9, [0.8, 0.7]) == 1

    def test_counts_strict_exceeders(self):
        assert descending_rank(0.7, [0.9, 0.8]) == 3

    def test_ties_do_not_worsen_rank(self):
        assert descending_rank(0.5, [0.5, 0.5]) == 1

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.floats(-10, 10))
    def test_rank_in_range(self, pool, s):
        assert 1 <= descending_rank(s, pool) <= len(pool) + 1

    @given(
        st.lists(st.floats(-10, 10), min_size=2, max_size=20),
        st.floats(-10, 10),
        st.randoms(use_true_random=False),
    )
    def test_permutation_invariant(self, pool, s, rnd):
        shuffled = list(pool)
        rnd.shuffle(shuffled)
        assert descending_rank(s, pool) == descending_rank(s, shuffled)

    @given(
        st.lists(st.integers(-5000, 5000), min_size=1, max_size=20),
        st.integers(-5000, 5000),
    )
    def test_monotone_transform_invariant(self, pool_m, s_m):
        # milli-unit grid keeps transformed values distinguishable in floats
        pool = np.asarray(pool_m) / 1000.0
        s = s_m / 1000.0

        def transform(x):
            return 3.0 * np.asarray(x) + 1.0

        assert descending_rank(s, pool) == descending_rank(float(transform(s)), transform(pool))


class TestPartitionQuery:
    def test_definition_unrolled(self):
        ctx = partition_query([1.0, 0.8, 0.3], [1, 1, 0], 0)
        np.testing.assert_array_equal(ctx.positives, [0.8])
        np.testing.assert_array_equal(ctx.negatives, [0.3])

    def test_lone_self(self):
        ctx = partition_query([0.5], [1], 0)
        assert ctx.num_positives == 0 and ctx.num_negatives == 0

    def test_four_items(self):
        ctx = partition_query([0.9, 0.2, 0.7, 0.1], [1, 0, 1, 0], 0)
        np.testing.assert_array_equal(ctx.positives, [0.7])
        np.testing.assert_array_equal(ctx.negatives, [0.2, 0.1])

    def test_self_excluded_even_when_negative_labeled(self):
        ctx = partition_query([0.9, 0.2], [0, 0], 0)
        np.testing.assert_array_equal(ctx.negatives, [0.2])

    def test_length_mismatch_raises(self):
        with pytest.raises(StructuralError):
            partition_query([0.9, 0.2], [1], 0)

    def test_out_of_range_self_raises(self):
        with pytest.raises(StructuralError):
            partition_query([0.9], [1], 3)

    @given(
        st.integers(min_value=1, max_value=20),
        st.integers(min_value=0, max_value=19),
        st.randoms(use_true_random=False),
    )
    def test_sizes_sum_to_n_minus_one(self, n, self_idx, rnd):
        self_idx %= n
        row = [rnd.uniform(-1, 1) for _ in range(n)]
        rel = [rnd.randint(0, 1) for _ in range(n)]
        ctx = partition_query(row, rel, self_idx)
        assert ctx.num_positives + ctx.num_negatives == n - 1


class TestRelevanceMatrix:
    def test_from_groups(self):
        rel = RelevanceMatrix.from_groups([0, 0, 1])
        np.testing.assert_array_equal(rel.entries, [[1, 1, 0], [1, 1, 0], [0, 0, 1]])

    def test_rejects_non_binary(self):
        with pytest.raises(StructuralError):
            RelevanceMatrix(np.array([[1, 2], [0, 1]]))

    def test_rejects_non_square(self):
        with pytest.raises(StructuralError):
            RelevanceMatrix(np.zeros((2, 3)))

    def test_query_contexts_cover_all_rows(self):
        sim = np.array([[1.0, 0.8, 0.3], [0.8, 1.0, 0.5], [0.3, 0.5, 1.0]])
        rel = RelevanceMatrix.from_groups([0, 0, 1])
        contexts = query_contexts(sim, rel)
        assert len(contexts) == 3
        np.testing.assert_array_equal(contexts[0].positives, [0.8])
        np.testing.assert_array_equal(contexts[2].positives, [])


class TestScoredList:
    def test_to_query_context(self):
        ctx = ScoredList([0.9, 0.1, 0.5], [1, 0, 1]).to_query_context()
        np.testing.assert_array_equal(ctx.positives, [0.9, 0.5])
        np.testing.assert_array_equal(ctx.negatives, [0.1])

    def test_rejects_length_mismatch(self):
        with pytest.raises(StructuralError):
            ScoredList([0.9], [1, 0])

    def test_rejects_nonfinite(self):
        with pytest.raises(StructuralError):
            QueryContext([np.nan], [0.0])
