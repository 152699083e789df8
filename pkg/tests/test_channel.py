import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raxcode.channel import (
    Channel,
    ChannelFormatError,
    InputDistribution,
    OperationRegion,
    RatePoint,
    RateProfile,
    bsc,
    conditional_mutual_information,
    dump_channel,
    identity_channel,
    load_channel,
    mutual_information,
    proper_subsets,
    region_is_achievable,
    xor_mac,
)

U2 = InputDistribution.uniform(2)
LOG2 = math.log(2)


def test_load_identity():
    ch = load_channel(b"# noiseless\ndmc 1 2 2\n1 0\n0 1\n")
    assert ch.num_users == 1 and ch.input_sizes == (2,) and ch.output_size == 2
    np.testing.assert_array_equal(ch.transition, np.eye(2))


def test_load_accepts_streams_and_paths(tmp_path):
    text = "dmc 1 2 2\n0.9 0.1  # row 0\n0.1 0.9\n"
    p = tmp_path / "bsc.dmc"
    p.write_text(text)
    for src in (text, io.StringIO(text), io.BytesIO(text.encode()), p, str(p.read_bytes(), "utf-8")):
        ch = load_channel(src)
        np.testing.assert_allclose(ch.transition, bsc(0.1).transition)


def test_row_sum_violation_names_row():
    with pytest.raises(ChannelFormatError, match=r"row 1"):
        load_channel("dmc 1 2 2\n0.5 0.5\n0.5 0.48\n")


@pytest.mark.parametrize("text", [
    "",
    "dmx 1 2 2\n1 0\n0 1\n",
    "dmc 1 2\n1 0\n0 1\n",
    "dmc 1 2 2\n1 0\n",
    "dmc 1 2 2\n1 0 0\n0 1\n",
    "dmc 1 2 2\n1 zero\n0 1\n",
    "dmc 1 2 2\n1.5 -0.5\n0 1\n",
    "dmc two 2 2\n1 0\n0 1\n",
])
def test_malformed(text):
    with pytest.raises(ChannelFormatError):
        load_channel(text)


def test_xor_tensor_roundtrip():
    ch = xor_mac()
    for x1 in range(2):
        for x2 in range(2):
            for y in range(2):
                assert ch.transition[x1, x2, y] == (1.0 if y == x1 ^ x2 else 0.0)
    again = load_channel(dump_channel(ch))
    np.testing.assert_array_equal(again.transition, ch.transition)


def test_channel_rejects_bad_tensor():
    with pytest.raises(ChannelFormatError):
        Channel(np.array([[0.5, 0.4], [0.5, 0.5]]))
    with pytest.raises(ChannelFormatError):
        Channel(np.ones(3))


def test_input_distribution_validation():
    with pytest.raises(ValueError):
        InputDistribution([0.5, 0.6])
    with pytest.raises(ValueError):
        InputDistribution([1.2, -0.2])
    assert InputDistribution([0.5, 0.5]) == U2
    assert hash(InputDistribution([0.5, 0.5])) == hash(U2)


@pytest.mark.parametrize("ch, expected", [
    (identity_channel(), LOG2),
    (bsc(0.5), 0.0),
    (bsc(0.1), LOG2 + 0.1 * math.log(0.1) + 0.9 * math.log(0.9)),
])
def test_mutual_information_examples(ch, expected):
    assert mutual_information(ch, U2) == pytest.approx(expected, abs=1e-12)


def test_bsc_value_digits():
    assert mutual_information(bsc(0.1), U2) == pytest.approx(0.368064, abs=1e-6)


def test_xor_conditional_information():
    ch = xor_mac()
    assert conditional_mutual_information(ch, [U2, U2], (0,)) == pytest.approx(LOG2, abs=1e-12)
    assert conditional_mutual_information(ch, [U2, U2], (1,)) == pytest.approx(LOG2, abs=1e-12)
    assert conditional_mutual_information(ch, [U2, U2], ()) == pytest.approx(LOG2, abs=1e-12)
    with pytest.raises(ValueError):
        conditional_mutual_information(ch, [U2, U2], (0, 1))


def test_point_mass_user_carries_nothing():
    ch = xor_mac()
    pm = InputDistribution.point_mass(2, 1)
    assert conditional_mutual_information(ch, [U2, pm], (0,)) == 0.0


def test_single_user_reduction_exact():
    d = InputDistribution([0.3, 0.7])
    ch = Channel(np.array([[0.9, 0.1], [0.3, 0.7]]))
    assert conditional_mutual_information(ch, [d], ()) == mutual_information(ch, d)


def _random_channel(rng, nx, ny):
    t = rng.random((nx, ny)) + 1e-3
    return Channel(t / t.sum(axis=1, keepdims=True))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4), st.integers(2, 5))
def test_mi_nonnegative_and_permutation_invariant(seed, nx, ny):
    rng = np.random.default_rng(seed)
    ch = _random_channel(rng, nx, ny)
    p = rng.random(nx)
    d = InputDistribution(p / p.sum())
    mi = mutual_information(ch, d)
    assert mi >= 0
    perm = rng.permutation(ny)
    assert mutual_information(Channel(ch.transition[:, perm]), d) == pytest.approx(mi, abs=1e-12)


def test_mi_zero_iff_output_independent():
    rows = np.array([[0.2, 0.5, 0.3]] * 3)
    d = InputDistribution([0.2, 0.3, 0.5])
    assert mutual_information(Channel(rows), d) == pytest.approx(0.0, abs=1e-15)
    rows[0] = [0.3, 0.5, 0.2]
    assert mutual_information(Channel(rows), d) > 1e-6


def test_rate_profile_validation():
    with pytest.raises(ValueError):
        RateProfile.single([0.2, 0.2], U2)
    with pytest.raises(ValueError):
        RateProfile.single([-0.1], U2)
    with pytest.raises(ValueError):
        RateProfile(((),))
    rp = RateProfile.single([0.1, 0.4], U2)
    assert rp.sizes() == (2,) and rp.rates((1,)) == (0.4,)


def test_region_validation():
    rp = RateProfile.single([0.1, 0.4], U2)
    with pytest.raises(ValueError):
        OperationRegion(frozenset())
    with pytest.raises(ValueError):
        OperationRegion.of(2).validate(rp)
    region = OperationRegion.of(0)
    assert region.outside(rp) == [(1,)]
    assert (0,) in region and (1,) not in region


def test_proper_subsets_order_and_cap():
    assert proper_subsets(1) == [()]
    assert proper_subsets(2) == [(), (0,), (1,)]
    assert len(proper_subsets(4)) == 15
    with pytest.raises(ValueError):
        proper_subsets(17)


def test_region_single_user_capacity_cases():
    ch = identity_channel()
    rp = RateProfile.single([0.2, 0.8], U2)
    ok, v = region_is_achievable(ch, rp, OperationRegion.of(0))
    assert ok and v == []
    ok, v = region_is_achievable(ch, rp, OperationRegion.of(1))
    assert not ok and [(x.vector, x.subset) for x in v] == [((1,), ())]


def _xor_profile(rates):
    return RateProfile(tuple(tuple(RatePoint(r, U2) for r in rates) for _ in range(2)))


def test_region_xor_sum_rate():
    ch = xor_mac()
    ok, _ = region_is_achievable(ch, _xor_profile([0.3]), OperationRegion.of((0, 0)))
    assert ok
    ok, v = region_is_achievable(ch, _xor_profile([0.4]), OperationRegion.of((0, 0)))
    assert not ok
    assert [(x.vector, x.subset) for x in v] == [((0, 0), ())]


def test_region_monotone_under_removal():
    ch = xor_mac()
    rp = _xor_profile([0.1, 0.3, 0.5])
    full = OperationRegion(frozenset({(0, 0), (0, 1), (1, 0), (1, 1), (0, 2)}))
    ok, _ = region_is_achievable(ch, rp, full)
    assert ok
    for v in full:
        smaller = OperationRegion(full.members - {v})
        assert region_is_achievable(ch, rp, smaller)[0]
