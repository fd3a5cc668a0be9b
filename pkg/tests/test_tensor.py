import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fasthebb import tensor as tc
from fasthebb.errors import InvalidTemperature, ShapeMismatch
from fasthebb.tensor import AllocationTracker, Tensor


def T(data):
    return Tensor(np.asarray(data, dtype=np.float64))


class TestMatmul:
    def test_identity_case(self):
        a = T([[[1.0, 2.0], [3.0, 4.0]]])
        eye = T(np.eye(2)[None])
        out = tc.matmul(a, eye)
        np.testing.assert_array_equal(out.data, a.data)
        out = tc.matmul(eye, a)
        np.testing.assert_array_equal(out.data, a.data)

    def test_column_vector(self):
        a = T([[[1.0, 2.0], [3.0, 4.0]]])
        b = T([[[5.0], [6.0]]])
        np.testing.assert_array_equal(tc.matmul(a, b).data, [[[17.0], [39.0]]])

    def test_broadcast_matches_stacked_products(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.standard_normal((3, 2, 4)))
        b = Tensor(rng.standard_normal((1, 4, 5)))
        out = tc.matmul(a, b)
        assert out.shape == (3, 2, 5)
        for i in range(3):
            expected = a.data[i] @ b.data[0]
            np.testing.assert_array_equal(out.data[i], expected)

    def test_contracted_dim_mismatch(self):
        with pytest.raises(ShapeMismatch):
            tc.matmul(T(np.ones((1, 2, 3))), T(np.ones((1, 2, 3))))

    def test_batch_dim_mismatch(self):
        with pytest.raises(ShapeMismatch):
            tc.matmul(T(np.ones((3, 2, 2))), T(np.ones((2, 2, 2))))

    @settings(max_examples=30, deadline=None)
    @given(
        b=st.integers(1, 8), n=st.integers(1, 8), s=st.integers(1, 8),
        seed=st.integers(0, 1000), left_batched=st.booleans(),
    )
    def test_broadcast_bitwise_equals_materialized(self, b, n, s, seed, left_batched):
        rng = np.random.default_rng(seed)
        if left_batched:
            a = Tensor(rng.standard_normal((b, n, s)))
            other = Tensor(rng.standard_normal((1, s, n)))
            tiled = Tensor(np.repeat(other.data, b, axis=0))
            lhs, rhs = a, other
            lhs_t, rhs_t = a, tiled
        else:
            a = Tensor(rng.standard_normal((1, n, s)))
            other = Tensor(rng.standard_normal((b, s, n)))
            tiled = Tensor(np.repeat(a.data, b, axis=0))
            lhs, rhs = a, other
            lhs_t, rhs_t = tiled, other
        np.testing.assert_array_equal(
            tc.matmul(lhs, rhs).data, tc.matmul(lhs_t, rhs_t).data
        )


class TestElementwise:
    def test_broadcast_sub_shapes(self):
        x = T(np.arange(6.0).reshape(2, 1, 3))
        w = T(np.ones((1, 4, 3)))
        out = tc.elementwise("sub", x, w)
        assert out.shape == (2, 4, 3)
        np.testing.assert_array_equal(out.data, x.data - w.data)

    def test_add_zero_identity(self):
        a = T([[1.0, -2.0, 3.0]])
        np.testing.assert_array_equal(tc.elementwise("add", a, 0.0).data, a.data)

    def test_scale(self):
        np.testing.assert_array_equal(
            tc.elementwise("scale", T([1.0, 2.0, 3.0]), 2.0).data, [2.0, 4.0, 6.0]
        )

    def test_non_singleton_mismatch(self):
        with pytest.raises(ShapeMismatch):
            tc.elementwise("add", T(np.ones((2, 3))), T(np.ones((2, 2))))

    def test_rank_mismatch(self):
        with pytest.raises(ShapeMismatch):
            tc.elementwise("add", T(np.ones((2, 3))), T(np.ones((1, 2, 3))))


class TestReduceSum:
    def test_singleton_dim_unchanged(self):
        a = T(np.arange(4.0).reshape(1, 4))
        np.testing.assert_array_equal(tc.reduce_sum(a, 0).data, a.data)

    def test_hand_sum(self):
        a = T([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(tc.reduce_sum(a, 0).data, [[4.0, 6.0]])

    def test_order_commutes(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            a = Tensor(rng.standard_normal((4, 5, 6)))
            ab = tc.reduce_sum(tc.reduce_sum(a, 0), 1)
            ba = tc.reduce_sum(tc.reduce_sum(a, 1), 0)
            np.testing.assert_allclose(ab.data, ba.data, rtol=1e-12)

    def test_deterministic_matches_sequential_loop(self):
        rng = np.random.default_rng(11)
        a = Tensor(rng.standard_normal((13, 7)) * 1e3)
        with tc.deterministic_mode(True):
            total = tc.reduce_sum(tc.reduce_sum(a, 1), 0).item()
        expected = 0.0
        partials = []
        for row in a.data:  # inner dim first, matching reduction order
            acc = 0.0
            for value in row:
                acc += value
            partials.append(acc)
        for value in partials:
            expected += value
        assert total == expected


class TestSoftmax:
    def test_symmetry(self):
        out = tc.softmax(T([[0.0, 0.0]]), 1.0, dim=1)
        np.testing.assert_allclose(out.data, [[0.5, 0.5]], atol=1e-15)

    def test_log2_case(self):
        out = tc.softmax(T([[np.log(2.0), 0.0]]), 1.0, dim=1)
        np.testing.assert_allclose(out.data, [[2.0 / 3.0, 1.0 / 3.0]], atol=1e-12)

    def test_high_temperature_near_uniform(self):
        rng = np.random.default_rng(3)
        y = Tensor(rng.standard_normal((4, 6)))
        out = tc.softmax(y, 1e9, dim=1)
        np.testing.assert_allclose(out.data, 1.0 / 6.0, atol=1e-6)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        y = Tensor(rng.standard_normal((8, 5)) * 5)
        out = tc.softmax(y, 0.5, dim=1)
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(out.data > 0) and np.all(out.data < 1)

    def test_shift_invariance(self):
        rng = np.random.default_rng(9)
        y = rng.standard_normal((4, 5))
        a = tc.softmax(Tensor(y), 2.0, dim=1)
        b = tc.softmax(Tensor(y + 17.3), 2.0, dim=1)
        np.testing.assert_allclose(a.data, b.data, atol=1e-12)

    def test_invalid_temperature(self):
        with pytest.raises(InvalidTemperature):
            tc.softmax(T([[1.0]]), 0.0)
        with pytest.raises(InvalidTemperature):
            tc.softmax(T([[1.0]]), -1.0)


class TestTrilMask:
    def test_n1(self):
        np.testing.assert_array_equal(tc.tril_mask(1).data, [[1.0]])

    def test_n2(self):
        np.testing.assert_array_equal(tc.tril_mask(2).data, [[1, 0], [1, 1]])

    def test_n3_row_sums(self):
        np.testing.assert_array_equal(tc.tril_mask(3).data.sum(axis=1), [1, 2, 3])


class TestAllocationTracking:
    def test_largest_and_total(self):
        with AllocationTracker() as tracker:
            T(np.ones((2, 3)))
            T(np.ones((4, 4)))
        assert tracker.largest == 16
        assert tracker.total == 22

    def test_reshape_is_free(self):
        a = T(np.ones((2, 6)))
        with AllocationTracker() as tracker:
            tc.reshape(a, (3, 4))
        assert tracker.total == 0


def test_tensor_is_immutable():
    t = T([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0
