import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pacfl.quantizer import (
    QuantizedVec,
    bits_per_element,
    dequantize,
    dequantize_rows,
    payload_bits,
    quantize,
    quantize_rows,
    uncompressed_bits,
)

finite_vectors = arrays(np.float64, st.integers(1, 40), elements=st.floats(-1e6, 1e6, allow_nan=False))


class TestQuantize:
    def test_zero_vector(self, rng):
        qv = quantize(np.zeros(5), 4, rng)
        assert qv.norm == 0.0
        assert not qv.levels.any()
        assert np.array_equal(dequantize(qv), np.zeros(5))

    def test_hand_example_level_probabilities(self):
        # e = 3/5 = 0.6, q = 4: e*q = 2.4, so level 3 with probability 0.4 and level 2 otherwise.
        rng = np.random.default_rng(7)
        draws = 200_000
        levels = np.array([quantize(np.array([3.0, 4.0]), 4, rng).levels[0] for _ in range(draws // 20)])
        assert set(np.unique(levels)) <= {2, 3}
        frac = (levels == 3).mean()
        se = np.sqrt(0.4 * 0.6 / levels.size)
        assert abs(frac - 0.4) < 4 * se
        # The expected dequantized value is 5 * (2*0.6 + 3*0.4) / 4 = 3.
        assert 5 * (2 * 0.6 + 3 * 0.4) / 4 == pytest.approx(3.0)

    def test_boundary_element_maps_to_top_level(self, rng):
        qv = quantize(np.array([5.0, 0.0]), 2, rng)
        assert qv.levels[0] == 2
        assert dequantize(qv)[0] == 5.0

    def test_lattice_aligned_input_is_exact(self, rng):
        # |v| / ||v||_2 = (0.6, 0.8) sit exactly on the 1/5 lattice.
        v = np.array([3.0, -4.0])
        qv = quantize(v, 5, rng)
        assert np.allclose(dequantize(qv), v, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("q", [0, 1])
    def test_rejects_small_q(self, rng, q):
        with pytest.raises(ValueError):
            quantize(np.ones(3), q, rng)

    def test_rejects_non_finite(self, rng):
        with pytest.raises(ValueError):
            quantize(np.array([1.0, np.nan]), 4, rng)

    @settings(max_examples=50)
    @given(finite_vectors, st.integers(2, 64), st.integers(0, 2**31))
    def test_bounded_by_norm_and_levels_in_range(self, v, q, seed):
        qv = quantize(v, q, np.random.default_rng(seed))
        assert qv.levels.min() >= 0 and qv.levels.max() <= q
        assert np.all(np.abs(dequantize(qv)) <= qv.norm * (1 + 1e-12))

    def test_monte_carlo_mean_is_unbiased(self):
        rng = np.random.default_rng(3)
        v = rng.standard_normal(20)
        norms, signs, levels = quantize_rows(np.broadcast_to(v, (50_000, 20)), 4, rng)
        x = dequantize_rows(norms, signs, levels, 4)
        se = x.std(axis=0, ddof=1) / np.sqrt(x.shape[0])
        assert np.all(np.abs(x.mean(axis=0) - v) <= 4 * se + 1e-12)

    def test_rows_match_single_vector_rule(self):
        v = np.array([[3.0, 4.0], [0.0, 0.0], [5.0, 0.0]])
        norms, signs, levels = quantize_rows(v, 4, np.random.default_rng(0))
        assert np.allclose(norms, [5.0, 0.0, 5.0])
        assert set(levels[0, :1]) <= {2, 3}
        assert not levels[1].any()
        assert levels[2, 0] == 4


class TestDequantize:
    def test_hand_example(self):
        qv = QuantizedVec(5.0, np.array([1], dtype=np.int8), np.array([2]), 4)
        assert dequantize(qv)[0] == 2.5

    def test_all_zero_levels(self):
        qv = QuantizedVec(3.0, np.ones(4, dtype=np.int8), np.zeros(4, dtype=np.int64), 8)
        assert not dequantize(qv).any()

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            QuantizedVec(1.0, np.ones(1, dtype=np.int8), np.array([9]), 8)
        with pytest.raises(ValueError):
            QuantizedVec(0.0, np.ones(1, dtype=np.int8), np.array([1]), 8)


class TestPayload:
    def test_examples(self):
        assert payload_bits(0, 8) == 32
        assert payload_bits(21840, 8) == 87_392
        assert payload_bits(21840, 2) == 43_712

    @pytest.mark.parametrize("q, bits", [(2, 2), (3, 3), (4, 3), (5, 4), (8, 4), (9, 5), (32, 6), (33, 7)])
    def test_bits_per_element(self, q, bits):
        assert bits_per_element(q) == bits

    @given(st.integers(0, 10**7), st.integers(2, 2**20), st.integers(2, 2**20))
    def test_monotone_in_q(self, dim, q1, q2):
        if q1 <= q2:
            assert payload_bits(dim, q1) <= payload_bits(dim, q2)

    @given(st.integers(0, 10**7), st.integers(2, 2**20))
    def test_strictly_increasing_in_dim(self, dim, q):
        assert payload_bits(dim + 1, q) > payload_bits(dim, q)

    @given(st.integers(32, 10**7), st.integers(2, 2**30))
    def test_compresses_below_float_width(self, dim, q):
        # At most 31 bits per element, so the norm word is paid for once dim >= 32.
        assert payload_bits(dim, q) <= uncompressed_bits(dim)

    @given(st.integers(0, 10**7))
    def test_widest_level_costs_one_norm_word_over_floats(self, dim):
        assert payload_bits(dim, 2**31) == uncompressed_bits(dim) + 32
