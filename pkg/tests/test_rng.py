import numpy as np
import pytest
from hypothesis import given, strategies as st

from lqmfg.rng import INIT_STEP, normals, philox4x32, seed_key, uniforms

# published Philox4x32-10 known-answer vectors
KAT = [
    ([0, 0, 0, 0], [0, 0], [0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8]),
    ([0xFFFFFFFF] * 4, [0xFFFFFFFF] * 2, [0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD]),
    ([0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344], [0xA4093822, 0x299F31D0],
     [0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1]),
]


@pytest.mark.parametrize("counter,key,expected", KAT)
def test_known_answers(counter, key, expected):
    out = philox4x32(np.array(counter, dtype=np.uint32), key)
    assert out.tolist() == expected


def test_batched_matches_single():
    ctr = np.array([c for c, _, _ in KAT[:1]] * 3, dtype=np.uint32)
    ctr[1, 0] = 7
    out = philox4x32(ctr, (0, 0))
    for row, c in zip(out, ctr):
        assert row.tolist() == philox4x32(c, (0, 0)).tolist()


def test_seed_key():
    assert seed_key(0) == (0, 0)
    assert seed_key(2 ** 32 + 5) == (5, 1)
    with pytest.raises(ValueError):
        seed_key(-1)
    with pytest.raises(ValueError):
        seed_key(2 ** 64)


def test_uniforms_open_interval():
    lo = uniforms(np.zeros((1, 4), dtype=np.uint32))
    hi = uniforms(np.full((1, 4), 0xFFFFFFFF, dtype=np.uint32))
    assert np.all(lo > 0) and np.all(hi < 1)


@given(st.integers(0, 2 ** 64 - 1), st.integers(0, 2 ** 32 - 1), st.integers(0, 1000))
def test_addressed_draws_are_deterministic(seed, step, path):
    a = normals(seed, step, path, np.arange(5), 3)
    b = normals(seed, step, path, np.arange(5), 3)
    assert a.shape == (5, 3)
    assert np.array_equal(a, b)
    # a sub-range is the same draw
    assert np.array_equal(normals(seed, step, path, 3, 3), a[3])


def test_odd_count_is_prefix_of_even():
    a = normals(11, 0, 0, 0, 3)
    b = normals(11, 0, 0, 0, 4)
    assert np.array_equal(a, b[:3])


def test_distinct_addresses_differ():
    base = normals(1, 0, 0, 0, 2)
    for other in (normals(2, 0, 0, 0, 2), normals(1, 1, 0, 0, 2), normals(1, 0, 1, 0, 2),
                  normals(1, 0, 0, 1, 2), normals(1, INIT_STEP, 0, 0, 2)):
        assert not np.array_equal(base, other)


def test_moments():
    z = normals(20240611, np.arange(200)[:, None], np.arange(250)[None, :], 0, 2).ravel()
    n = z.size
    assert abs(z.mean()) < 5 / np.sqrt(n)
    assert abs(z.var() - 1) < 5 * np.sqrt(2 / n)
    assert abs(np.mean(z ** 3)) < 5 * np.sqrt(15 / n)
    assert abs(np.mean(z ** 4) - 3) < 5 * np.sqrt(96 / n)
    # the two normals of a pair are uncorrelated
    pairs = normals(3, np.arange(40000), 0, 0, 2)
    assert abs(np.corrcoef(pairs.T)[0, 1]) < 5 / np.sqrt(40000)
