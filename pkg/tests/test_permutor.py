import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from xbarsec.permutor import (
    PermKey,
    apply_permutor,
    generate_key,
    key_space_bits,
    key_to_permutation,
    remove_permutor,
    store_permuted,
    switch_count,
    transistor_overhead,
)


def keys(max_rows=40):
    return st.integers(1, max_rows).flatmap(
        lambda m: st.lists(st.integers(0, 5), min_size=m // 3, max_size=m // 3).map(lambda ks: PermKey(m, ks))
    )


def test_generate_key_shapes():
    k = generate_key(3, 7)
    assert len(k.triplet_keys) == 1 and 0 <= k.triplet_keys[0] <= 5
    assert generate_key(2, 123).triplet_keys == ()
    assert generate_key(128, 99) == generate_key(128, 99)
    assert len(generate_key(128, 99).triplet_keys) == 42


def test_key_validation():
    with pytest.raises(ValueError):
        PermKey(6, (0,))
    with pytest.raises(ValueError):
        PermKey(3, (6,))


def test_enumeration_table():
    assert key_to_permutation(PermKey(6, (0, 0))).tolist() == list(range(6))
    assert key_to_permutation(PermKey(3, (4,))).tolist() == [1, 2, 0]
    assert key_to_permutation(PermKey(5, (3,))).tolist() == [0, 2, 1, 3, 4]
    # all six entries, by the fixed order identity, (01), (02), (12), (012), (021)
    table = [key_to_permutation(PermKey(3, (k,))).tolist() for k in range(6)]
    assert table == [[0, 1, 2], [1, 0, 2], [2, 1, 0], [0, 2, 1], [1, 2, 0], [2, 0, 1]]


def test_apply_examples():
    v = np.array([10.0, 20.0, 30.0])
    assert apply_permutor(v, PermKey(3, (1,))).tolist() == [20.0, 10.0, 30.0]
    assert apply_permutor(v, PermKey(3, (0,))).tolist() == v.tolist()
    with pytest.raises(ValueError):
        apply_permutor(np.zeros(4), PermKey(3, (1,)))


def test_store_examples():
    w = np.array([[0.0], [1.0], [2.0]])
    assert store_permuted(w, PermKey(3, (4,))).ravel().tolist() == [2.0, 0.0, 1.0]
    assert np.array_equal(store_permuted(w, PermKey(3, (0,))), w)
    with pytest.raises(ValueError):
        store_permuted(np.zeros((4, 2)), PermKey(3, (0,)))


@given(keys())
def test_mapping_is_local_bijection(key):
    mapping = key_to_permutation(key)
    m = key.rows
    assert sorted(mapping.tolist()) == list(range(m))
    full = 3 * (m // 3)
    i = np.arange(m)
    assert np.all(np.abs(mapping - i) <= 2)
    assert np.all(mapping[:full] // 3 == i[:full] // 3)
    assert np.all(mapping[full:] == i[full:])


@given(keys(), st.integers(0, 2**32 - 1))
def test_apply_round_trip(key, seed):
    v = np.random.default_rng(seed).normal(size=key.rows)
    assert np.array_equal(remove_permutor(apply_permutor(v, key), key), v)


@given(keys(), st.integers(0, 2**32 - 1))
def test_transparency(key, seed):
    rng = np.random.default_rng(seed)
    w = rng.uniform(size=(key.rows, 5))
    v = rng.uniform(size=key.rows)
    np.testing.assert_allclose(apply_permutor(v, key) @ store_permuted(w, key), v @ w, rtol=1e-12)
    # permutation preserves the multiset of rows
    assert sorted(map(tuple, store_permuted(w, key))) == sorted(map(tuple, w))


@pytest.mark.parametrize("m", range(1, 7))
def test_brute_force_key_space(m):
    perms = {
        tuple(key_to_permutation(PermKey(m, ks)))
        for ks in itertools.product(range(6), repeat=m // 3)
    }
    assert len(perms) == 6 ** (m // 3)
    assert key_space_bits(m) == pytest.approx(math.log2(len(perms)), abs=1e-12)


def test_key_space_bits():
    assert key_space_bits(128) == pytest.approx(108.57, abs=0.01)
    assert key_space_bits(3) == pytest.approx(2.585, abs=1e-3)
    assert key_space_bits(10) == pytest.approx(7.755, abs=1e-3)


def test_transistor_overhead():
    assert switch_count(128) == 380
    assert transistor_overhead(128, 128) == pytest.approx(380 / 16384)
    assert transistor_overhead(256, 128) == pytest.approx(766 / 32768)
    assert round(transistor_overhead(256, 128) * 100, 2) == 2.34
    assert transistor_overhead(3, 1) == pytest.approx(3.0)


def test_hex_round_trip():
    key = generate_key(130, 5)
    text = key.to_hex()
    assert text.startswith("130:") and len(text) == 4 + 43
    assert PermKey.from_hex(text) == key
    assert PermKey.from_hex("2:") == PermKey(2, ())
