"""Exactness, ordering, and error behavior of the flat vector index."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragasr.index import (
    DimensionMismatchError,
    EmptyIndexError,
    FlatIndex,
    FrozenIndexError,
)


def make_index(rows, dim=None):
    mat = np.asarray(rows, dtype=np.float32)
    idx = FlatIndex(dim or mat.shape[1])
    idx.insert_batch(mat)
    return idx.freeze()


class TestInsert:
    def test_consecutive_ids_from_empty(self):
        idx = FlatIndex(2)
        assert idx.insert_batch(np.zeros((3, 2), dtype=np.float32)) == [0, 1, 2]
        assert len(idx) == 3

    def test_ids_continue_across_batches(self):
        idx = FlatIndex(2)
        idx.insert_batch(np.zeros((2, 2)))
        assert idx.insert_batch(np.ones((2, 2))) == [2, 3]

    def test_empty_batch(self):
        idx = FlatIndex(4)
        assert idx.insert_batch(np.zeros((0, 4))) == []
        assert len(idx) == 0

    def test_wrong_dim_rejects_whole_batch(self):
        idx = FlatIndex(3)
        idx.insert_batch(np.zeros((2, 3)))
        with pytest.raises(DimensionMismatchError):
            idx.insert_batch(np.zeros((5, 4)))
        assert len(idx) == 2

    def test_non_finite_rejected(self):
        idx = FlatIndex(2)
        with pytest.raises(ValueError):
            idx.insert_batch(np.array([[np.nan, 0.0]]))
        assert len(idx) == 0

    def test_frozen_index_rejects_insert(self):
        idx = make_index([[0.0, 0.0]])
        with pytest.raises(FrozenIndexError):
            idx.insert_batch(np.zeros((1, 2)))


class TestQuery:
    def test_self_retrieval_distance_zero(self):
        idx = make_index([[1.5, -2.0], [3.0, 4.0]])
        hit = idx.query_topk(np.array([3.0, 4.0]), 1)
        assert hit.ids[0] == 1
        assert hit.distances[0] == 0.0

    def test_hand_computed_squared_l2(self):
        idx = make_index([[0.0, 0.0], [3.0, 4.0]])
        hit = idx.query_topk(np.array([0.0, 0.0]), 2)
        assert list(hit.ids) == [0, 1]
        assert list(hit.distances) == [0.0, 25.0]

    def test_k_saturates_at_index_size(self):
        idx = make_index([[0.0], [1.0], [2.0]], dim=1)
        hit = idx.query_topk(np.array([0.0]), 16)
        assert len(hit) == 3

    def test_tie_broken_by_ascending_id(self):
        idx = make_index([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
        hit = idx.query_topk(np.array([0.0, 0.0]), 3)
        assert list(hit.ids) == [0, 1, 2]
        oracle = idx.query_topk_oracle(np.array([0.0, 0.0]), 3)
        assert list(oracle.ids) == [0, 1, 2]

    def test_boundary_tie_prefers_lower_id(self):
        # Entries 1 and 2 tie at the k=2 boundary; id 1 must win.
        idx = make_index([[0.0], [2.0], [-2.0]], dim=1)
        hit = idx.query_topk(np.array([0.0]), 2)
        assert list(hit.ids) == [0, 1]

    def test_empty_index_error(self):
        idx = FlatIndex(2)
        with pytest.raises(EmptyIndexError):
            idx.query_topk(np.zeros(2), 1)

    def test_query_dim_mismatch(self):
        idx = make_index([[0.0, 0.0]])
        with pytest.raises(DimensionMismatchError):
            idx.query_topk(np.zeros(3), 1)

    def test_bad_k(self):
        idx = make_index([[0.0, 0.0]])
        with pytest.raises(ValueError):
            idx.query_topk(np.zeros(2), 0)


class TestOracleAgreement:
    def test_random_batch_matches_oracle(self):
        rng = np.random.default_rng(11)
        keys = rng.standard_normal((1000, 32)).astype(np.float32)
        idx = make_index(keys)
        for _ in range(50):
            q = rng.standard_normal(32).astype(np.float32)
            fast = idx.query_topk(q, 16)
            slow = idx.query_topk_oracle(q, 16)
            assert np.array_equal(fast.ids, slow.ids)
            assert np.array_equal(fast.distances, slow.distances)

    def test_duplicate_heavy_data_matches_oracle(self):
        rng = np.random.default_rng(5)
        base = rng.integers(0, 3, size=(40, 4)).astype(np.float32)
        idx = make_index(base)
        for _ in range(25):
            q = rng.integers(0, 3, size=4).astype(np.float32)
            fast = idx.query_topk(q, 7)
            slow = idx.query_topk_oracle(q, 7)
            assert np.array_equal(fast.ids, slow.ids)

    def test_insertion_order_only_affects_ties(self):
        rng = np.random.default_rng(3)
        keys = rng.standard_normal((64, 8)).astype(np.float32)
        perm = rng.permutation(64)
        a = make_index(keys)
        b = make_index(keys[perm])
        for _ in range(20):
            q = rng.standard_normal(8).astype(np.float32)
            ha, hb = a.query_topk(q, 10), b.query_topk(q, 10)
            assert np.allclose(ha.distances, hb.distances)
            assert np.array_equal(a.keys[ha.ids], b.keys[hb.ids])


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_property_sorted_nonnegative_and_oracle_equal(data):
    n = data.draw(st.integers(1, 40))
    dim = data.draw(st.integers(1, 6))
    k = data.draw(st.integers(1, 12))
    elements = st.floats(-8, 8, allow_nan=False, width=32)
    rows = data.draw(
        st.lists(st.lists(elements, min_size=dim, max_size=dim), min_size=n, max_size=n)
    )
    q = np.asarray(data.draw(st.lists(elements, min_size=dim, max_size=dim)), dtype=np.float32)
    idx = make_index(np.asarray(rows, dtype=np.float32))
    fast = idx.query_topk(q, k)
    slow = idx.query_topk_oracle(q, k)
    assert np.array_equal(fast.ids, slow.ids)
    assert np.array_equal(fast.distances, slow.distances)
    assert (fast.distances >= 0).all()
    assert (np.diff(fast.distances) >= 0).all()
