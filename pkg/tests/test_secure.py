import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedkge.errors import (
    ConfigError,
    ContractError,
    EncodingRangeError,
    UnresolvedMaskError,
)
from fedkge.secure import (
    DEFAULT_MODULUS,
    DEFAULT_SCALE_BITS,
    FixedPointCodec,
    make_pairwise_seeds,
    psu_union,
    secagg_share,
    secagg_sum,
)


class TestPsu:
    def test_union_is_sorted_union(self):
        res = psu_union([{3, 1}, {1, 5}, {2}])
        assert res.union_ids == (1, 2, 3, 5)

    def test_order_invariant(self):
        sets = [{4, 9}, {0}, {9, 2}]
        a = psu_union(sets)
        b = psu_union(list(reversed(sets)))
        assert a.union_ids == b.union_ids

    def test_transcript_only_cardinalities(self):
        res = psu_union([{10, 20}, {30}])
        assert res.transcript == (2, 1)

    def test_empty_input_rejected(self):
        with pytest.raises(ConfigError):
            psu_union([])

    @given(st.lists(st.sets(st.integers(0, 100)), min_size=1, max_size=6))
    def test_matches_python_union(self, sets):
        res = psu_union(sets)
        assert res.union_ids == tuple(sorted(set().union(*sets)))


class TestCodec:
    def test_default_parameters(self):
        codec = FixedPointCodec()
        assert codec.modulus == DEFAULT_MODULUS == 2**61 - 1
        assert codec.scale == 2**DEFAULT_SCALE_BITS

    def test_grid_values_round_trip_exactly(self):
        codec = FixedPointCodec()
        vals = np.array([0.0, 1.0, -1.0, 0.5, -3.25, 123456.0]) / 8
        back = codec.decode(codec.encode(vals))
        assert np.array_equal(back, vals)

    def test_round_trip_error_bound(self):
        codec = FixedPointCodec()
        rng = np.random.default_rng(0)
        vals = rng.uniform(-100, 100, size=1000)
        back = codec.decode(codec.encode(vals))
        assert np.abs(back - vals).max() <= 0.5 / codec.scale

    def test_range_check(self):
        codec = FixedPointCodec()
        with pytest.raises(EncodingRangeError):
            codec.encode([codec.max_encodable * 2])

    def test_negative_representation(self):
        codec = FixedPointCodec()
        enc = codec.encode([-1.0])
        assert enc[0] == codec.modulus - codec.scale

    def test_field_add_wraps(self):
        codec = FixedPointCodec()
        a = np.array([codec.modulus - 1], dtype=np.uint64)
        b = np.array([5], dtype=np.uint64)
        assert codec.add(a, b)[0] == 4

    def test_sub_inverts_add(self):
        codec = FixedPointCodec()
        rng = np.random.default_rng(1)
        a = rng.integers(0, codec.modulus, size=50, dtype=np.uint64)
        b = rng.integers(0, codec.modulus, size=50, dtype=np.uint64)
        assert np.array_equal(codec.sub(codec.add(a, b), b), a)

    @given(
        st.lists(
            st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False),
            min_size=1,
            max_size=32,
        )
    )
    @settings(max_examples=200)
    def test_round_trip_within_half_step(self, vals):
        codec = FixedPointCodec()
        arr = np.array(vals)
        back = codec.decode(codec.encode(arr))
        assert np.abs(back - arr).max() <= 0.5 / codec.scale + 1e-12


class TestSecagg:
    def _shares(self, secrets, root_seed=7):
        codec = FixedPointCodec()
        ids = list(range(len(secrets)))
        seeds = make_pairwise_seeds(root_seed, ids)
        return [
            secagg_share(s, cid, seeds, codec) for cid, s in zip(ids, secrets)
        ], codec

    @pytest.mark.parametrize("num_clients", [2, 3, 5, 10])
    def test_sum_matches_plain_sum(self, num_clients):
        rng = np.random.default_rng(num_clients)
        secrets = [rng.uniform(-5, 5, size=40) for _ in range(num_clients)]
        shares, codec = self._shares(secrets)
        got = secagg_sum(shares, codec)
        want = np.sum(secrets, axis=0)
        assert np.abs(got - want).max() < num_clients * 2.0**-24

    def test_single_share_is_masked(self):
        secrets = [np.ones(64), np.zeros(64), np.full(64, -2.0)]
        shares, codec = self._shares(secrets)
        # no individual share should decode to anything near its secret
        for share, secret in zip(shares, secrets):
            leaked = codec.decode(share.values)
            assert np.abs(leaked - secret).max() > 1.0

    def test_masks_depend_on_root_seed(self):
        secrets = [np.ones(8), np.zeros(8)]
        a, codec = self._shares(secrets, root_seed=1)
        b, _ = self._shares(secrets, root_seed=2)
        assert not np.array_equal(a[0].values, b[0].values)
        assert np.allclose(secagg_sum(a, codec), secagg_sum(b, codec))

    def test_missing_participant_aborts(self):
        secrets = [np.ones(8), np.zeros(8), np.full(8, 3.0)]
        shares, codec = self._shares(secrets)
        with pytest.raises(UnresolvedMaskError):
            secagg_sum(shares[:-1], codec)

    def test_disagreeing_participants_rejected(self):
        secrets = [np.ones(4), np.zeros(4)]
        shares, codec = self._shares(secrets)
        seeds2 = make_pairwise_seeds(7, [0, 1, 2])
        rogue = secagg_share(np.ones(4), 2, seeds2, codec)
        with pytest.raises(ContractError):
            secagg_sum([shares[0], rogue], codec)

    def test_empty_rejected(self):
        codec = FixedPointCodec()
        with pytest.raises(ContractError):
            secagg_sum([], codec)

    def test_deterministic(self):
        secrets = [np.arange(6, dtype=float), np.ones(6)]
        a, codec = self._shares(secrets)
        b, _ = self._shares(secrets)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.values, sb.values)

    @given(
        st.integers(2, 6),
        st.integers(0, 2**31),
        st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=16),
    )
    @settings(max_examples=50, deadline=None)
    def test_exactness_property(self, num_clients, root_seed, base):
        rng = np.random.default_rng(abs(root_seed) % 2**32)
        secrets = [
            np.array(base) + rng.uniform(-1, 1, size=len(base))
            for _ in range(num_clients)
        ]
        codec = FixedPointCodec()
        ids = list(range(num_clients))
        seeds = make_pairwise_seeds(root_seed, ids)
        shares = [secagg_share(s, c, seeds, codec) for c, s in zip(ids, secrets)]
        got = secagg_sum(shares, codec)
        plain = np.sum([codec.decode(codec.encode(s)) for s in secrets], axis=0)
        # field sum of encodings equals the sum of decoded encodings exactly
        np.testing.assert_allclose(got, plain, rtol=0, atol=1e-12)


class TestMaskAlgebra:
    @pytest.mark.parametrize("num_clients", [2, 3, 4, 7])
    def test_pairwise_masks_cancel_exactly(self, num_clients):
        # all-zero secrets isolate the mask component; the field sum of all
        # shares must be exactly zero
        codec = FixedPointCodec()
        ids = list(range(num_clients))
        seeds = make_pairwise_seeds(99, ids)
        shares = [secagg_share(np.zeros(32), c, seeds, codec) for c in ids]
        total = shares[0].values
        for s in shares[1:]:
            total = codec.add(total, s.values)
        assert np.all(total == 0)

    def test_integer_mask_counts_survive_exactly(self):
        codec = FixedPointCodec()
        ids = [0, 1, 2]
        seeds = make_pairwise_seeds(5, ids)
        counts = [
            np.array([1.0, 0.0, 1.0, 1.0]),
            np.array([0.0, 1.0, 1.0, 0.0]),
            np.array([1.0, 1.0, 0.0, 0.0]),
        ]
        shares = [secagg_share(c, i, seeds, codec) for i, c in zip(ids, counts)]
        got = secagg_sum(shares, codec)
        assert np.array_equal(got, np.sum(counts, axis=0))

    def test_share_distribution_uniform_smoke(self):
        # not a security proof: a chi-square sanity check that one client's
        # share of a fixed scalar secret looks uniform over the field
        codec = FixedPointCodec()
        num_bins = 16
        edges = np.linspace(0, codec.modulus, num_bins + 1)
        observed = np.zeros(num_bins)
        secret = np.array([1.2345])
        for root in range(10_000):
            seeds = make_pairwise_seeds(root, [0, 1])
            share = secagg_share(secret, 0, seeds, codec)
            observed[np.searchsorted(edges, float(share.values[0]), "right") - 1] += 1
        expected = 10_000 / num_bins
        chi2 = float(np.sum((observed - expected) ** 2 / expected))
        # df = 15; 37.7 is the 0.1% critical value
        assert chi2 < 37.7


class TestPairwiseSeeds:
    def test_symmetric(self):
        seeds = make_pairwise_seeds(3, [0, 1, 2])
        assert seeds[(0, 1)] == seeds[(1, 0)]
        assert seeds[(0, 2)] == seeds[(2, 0)]

    def test_pairs_differ(self):
        seeds = make_pairwise_seeds(3, [0, 1, 2])
        assert len({seeds[(0, 1)], seeds[(0, 2)], seeds[(1, 2)]}) == 3
