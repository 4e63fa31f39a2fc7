import numpy as np
import pytest

from modelpress import (
    BandwidthProfile,
    KVCacheConfig,
    dequantize,
    make_kv_config,
    perplexity,
    quantize,
)

from conftest import CTX, SLICE8

# Frozen on the shipped 8-layer fixture, first SLICE8 corpus bytes, ctx 64:
# uniform quantization degrades monotonically with narrower widths there.
GOLDEN_PPL16 = 365.2417448703912
GOLDEN_PPL8 = 365.4207034358885
GOLDEN_PPL6 = 370.43867379281994


class TestQuantize:
    def test_direct_evaluation_unit_step(self):
        q = quantize(np.array([0.0, 1.0, 2.0, 3.0]), 2)
        assert q.step == 1.0
        assert q.vmin == 0.0
        np.testing.assert_array_equal(q.codes, [0, 1, 2, 3])

    def test_constant_block_is_lossless(self):
        q = quantize(np.array([5.0, 5.0, 5.0]), 8)
        np.testing.assert_array_equal(q.codes, [0, 0, 0])
        assert q.vmin == 5.0 and q.step == 1.0
        np.testing.assert_array_equal(dequantize(q), [5.0, 5.0, 5.0])

    @pytest.mark.parametrize("bits", [2, 4, 6, 8, 12, 16])
    def test_endpoints_map_to_extreme_codes(self, bits, rng):
        a = rng.uniform(-4, 4, size=32)
        q = quantize(a, bits)
        assert q.codes[np.argmin(a)] == 0
        assert q.codes[np.argmax(a)] == (1 << bits) - 1
        dq = dequantize(q)
        assert dq[np.argmin(a)] == pytest.approx(a.min(), rel=1e-9, abs=1e-12)
        assert dq[np.argmax(a)] == pytest.approx(a.max(), rel=1e-9, abs=1e-9)

    @pytest.mark.parametrize("bits", [2, 4, 6, 8])
    def test_round_trip_error_within_half_step(self, bits, rng):
        for _ in range(200):
            a = rng.uniform(-10, 10, size=rng.integers(1, 64))
            q = quantize(a, bits)
            dq = dequantize(q)
            slack = q.step / 2 + 4 * np.spacing(np.maximum(np.abs(a), np.abs(dq)))
            assert np.all(np.abs(dq - a) <= slack)
            assert np.all(q.codes <= (1 << bits) - 1)

    def test_quantization_is_monotone(self, rng):
        a = rng.uniform(-5, 5, size=100)
        q = quantize(a, 4)
        order = np.argsort(a)
        assert np.all(np.diff(q.codes[order].astype(np.int64)) >= 0)

    def test_doubling_bits_at_least_halves_step(self, rng):
        a = rng.uniform(-3, 3, size=40)
        for bits in (2, 4, 8):
            wide = quantize(a, bits).step
            narrow = quantize(a, bits * 2).step
            assert narrow <= wide / 2

    def test_rounding_is_half_away_from_zero(self):
        # scaled value 1.5 must round to 2, not to even
        q = quantize(np.array([0.0, 1.5, 4.0]), 2)  # step = 4/3
        assert q.step == pytest.approx(4.0 / 3.0)
        # (1.5 - 0) / (4/3) = 1.125 -> 1 ; construct exact halfway instead
        q = quantize(np.array([0.0, 0.5, 1.0]), 2)  # step = 1/3; 0.5/(1/3) = 1.5
        assert q.codes[1] == 2

    def test_shape_preserved(self, rng):
        a = rng.uniform(-1, 1, size=(3, 5))
        q = quantize(a, 6)
        assert q.codes.shape == (3, 5)
        assert dequantize(q).shape == (3, 5)

    def test_empty_block_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            quantize(np.array([]), 8)

    @pytest.mark.parametrize("bits", [0, 1, 17])
    def test_bit_width_bounds(self, bits):
        with pytest.raises(ValueError, match="bit-width"):
            quantize(np.array([1.0]), bits)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="NaN"):
            quantize(np.array([1.0, np.inf]), 8)

    def test_dequantize_all_zero_codes(self):
        q = quantize(np.array([7.0, 7.0]), 4)
        np.testing.assert_array_equal(dequantize(q), [7.0, 7.0])

    def test_subnormal_range_treated_as_constant(self):
        tiny = np.array([0.0, 5e-324])  # range underflows when divided by levels
        q = quantize(tiny, 8)
        assert q.step == 1.0
        np.testing.assert_array_equal(q.codes, [0, 0])
        assert np.all(np.isfinite(dequantize(q)))


class TestBandwidthProfile:
    def test_balanced_half_and_half_split(self):
        profile = BandwidthProfile(bits=(8, 8, 8, 8, 6, 6, 6, 6))
        assert sum(1 for b in profile.bits if b == 8) == 4
        assert sum(1 for b in profile.bits if b == 6) == 4
        assert profile.satisfies_cardinality()

    def test_unbalanced_even_count_violates(self):
        assert not BandwidthProfile(bits=(8, 8, 8, 6)).satisfies_cardinality()

    def test_odd_count_favors_compression(self):
        assert BandwidthProfile(bits=(6, 6, 8)).satisfies_cardinality()
        assert not BandwidthProfile(bits=(8, 8, 6)).satisfies_cardinality()

    def test_sixteen_allowed_for_baselines_but_not_cardinality(self):
        profile = BandwidthProfile(bits=(16, 16))
        assert not profile.satisfies_cardinality()

    def test_bad_width_rejected(self):
        with pytest.raises(ValueError, match="6, 8, or 16"):
            BandwidthProfile(bits=(8, 7))

    def test_json_round_trip(self):
        profile = BandwidthProfile(bits=(8, 6, 6, 8))
        assert BandwidthProfile.from_json_dict(profile.to_json_dict()) == profile

    def test_bad_document_rejected(self):
        with pytest.raises(ValueError, match="bits"):
            BandwidthProfile.from_json_dict({"widths": [8, 6]})


class TestKVCacheConfig:
    def test_demo_width_4_is_accepted(self):
        assert KVCacheConfig.uniform(3, 4).bits == (4, 4, 4)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="\\[2, 16\\]"):
            KVCacheConfig(bits=(1, 8))

    def test_make_kv_config_checks_length(self):
        with pytest.raises(ValueError, match="layers"):
            make_kv_config(BandwidthProfile(bits=(8, 6)), 3)


class TestFixtureGoldens:
    def test_all16_profile_is_bitwise_passthrough(self, model8, corpus, kv16_8):
        profile16 = BandwidthProfile(bits=(16,) * 8)
        via_profile = perplexity(model8, corpus[:SLICE8], make_kv_config(profile16, 8), CTX)
        baseline = perplexity(model8, corpus[:SLICE8], kv16_8, CTX)
        assert via_profile == baseline  # bitwise within one build
        assert baseline == pytest.approx(GOLDEN_PPL16, rel=1e-9)

    def test_monotone_degradation_on_fixture(self, model8, corpus):
        ppl8 = perplexity(model8, corpus[:SLICE8], KVCacheConfig.uniform(8, 8), CTX)
        ppl6 = perplexity(model8, corpus[:SLICE8], KVCacheConfig.uniform(8, 6), CTX)
        assert ppl8 == pytest.approx(GOLDEN_PPL8, rel=1e-9)
        assert ppl6 == pytest.approx(GOLDEN_PPL6, rel=1e-9)
        assert ppl8 <= ppl6
