"""Image tensor container and log/linear conversion."""

import numpy as np
import pytest

from softlambert.tensor import (DEFAULT_LOG_EPSILON, PlaneTensor, ewise,
                                from_log, to_log)


class TestPlaneTensor:
    def test_promotes_rank_2_to_single_channel(self):
        t = PlaneTensor(np.ones((4, 5)))
        assert t.shape == (4, 5, 1)
        assert t.channels == 1

    def test_copies_and_freezes_data(self):
        src = np.ones((2, 2, 3))
        t = PlaneTensor(src)
        src[0, 0, 0] = 7.0
        assert t.array[0, 0, 0] == 1.0
        with pytest.raises(ValueError):
            t.array[0, 0, 0] = 9.0

    def test_converts_to_float64(self):
        t = PlaneTensor(np.ones((2, 2, 1), dtype=np.float32))
        assert t.array.dtype == np.float64

    @pytest.mark.parametrize("bad", [np.ones((0, 3, 1)), np.ones((3, 0, 1)),
                                     np.ones((2, 2, 0))])
    def test_rejects_empty_dims(self, bad):
        with pytest.raises(ValueError):
            PlaneTensor(bad)

    def test_rejects_non_finite(self):
        arr = np.ones((2, 2, 1))
        arr[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            PlaneTensor(arr)

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            PlaneTensor(np.ones(5))
        with pytest.raises(ValueError):
            PlaneTensor(np.ones((2, 2, 2, 2)))


class TestLogConversion:
    def test_round_trip_at_half(self):
        t = PlaneTensor(np.full((2, 2, 3), 0.5))
        back = from_log(to_log(t, 1e-4))
        np.testing.assert_array_equal(back.array, t.array)

    def test_round_trip_random_above_epsilon(self):
        rng = np.random.default_rng(0)
        t = PlaneTensor(rng.uniform(0.01, 1.0, (4, 4, 3)))
        back = from_log(to_log(t))
        np.testing.assert_allclose(back.array, t.array, rtol=0, atol=1e-15)

    def test_zero_clamps_to_epsilon(self):
        t = PlaneTensor(np.zeros((2, 2, 1)))
        log_img = to_log(t, 1e-4)
        np.testing.assert_allclose(log_img.array, np.log(1e-4))
        assert np.all(np.isfinite(log_img.array))

    def test_values_below_epsilon_clamp(self):
        t = PlaneTensor(np.full((1, 1, 1), 1e-9))
        log_img = to_log(t, 1e-4)
        assert log_img.array[0, 0, 0] == np.log(1e-4)

    def test_rejects_negative_linear_values(self):
        t = PlaneTensor(np.full((1, 1, 1), -0.5))
        with pytest.raises(ValueError):
            to_log(t)

    @pytest.mark.parametrize("eps", [0.0, -1.0])
    def test_rejects_non_positive_epsilon(self, eps):
        t = PlaneTensor(np.ones((1, 1, 1)))
        with pytest.raises(ValueError):
            to_log(t, epsilon=eps)

    def test_default_epsilon_value(self):
        assert DEFAULT_LOG_EPSILON == 1e-4


class TestEwise:
    def test_add_sub_mul(self):
        a = PlaneTensor(np.full((2, 2, 3), 2.0))
        b = PlaneTensor(np.full((2, 2, 3), 3.0))
        np.testing.assert_array_equal(ewise(a, b, "add").array, 5.0 * np.ones((2, 2, 3)))
        np.testing.assert_array_equal(ewise(a, b, "sub").array, -np.ones((2, 2, 3)))
        np.testing.assert_array_equal(ewise(a, b, "mul").array, 6.0 * np.ones((2, 2, 3)))

    def test_channel_vector_broadcast(self):
        a = PlaneTensor(np.ones((2, 2, 3)))
        out = ewise(a, np.array([1.0, 2.0, 3.0]), "mul")
        np.testing.assert_array_equal(out.array[0, 0], [1.0, 2.0, 3.0])

    def test_shape_mismatch_raises(self):
        a = PlaneTensor(np.ones((2, 2, 3)))
        b = PlaneTensor(np.ones((2, 3, 3)))
        with pytest.raises(ValueError):
            ewise(a, b, "add")

    def test_unknown_op_raises(self):
        a = PlaneTensor(np.ones((2, 2, 1)))
        with pytest.raises(ValueError):
            ewise(a, a, "div")
