import numpy as np
from hypothesis import given, strategies as st

from satlab import rng

U64 = st.integers(0, 2**64 - 1)


def splitmix64_reference(seed, n):
    """Textbook sequential SplitMix64."""
    out, s = [], seed
    for _ in range(n):
        s = (s + 0x9E3779B97F4A7C15) % 2**64
        z = s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) % 2**64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) % 2**64
        out.append(z ^ (z >> 31))
    return out


def test_known_vector():
    assert int(rng.raw_stream(0, 1)[0]) == 0xE220A8397B1DCDAF


@given(U64)
def test_stream_matches_sequential(seed):
    assert [int(v) for v in rng.raw_stream(seed, 8)] == splitmix64_reference(seed, 8)


@given(U64, st.integers(0, 50))
def test_offsets_are_counter_based(seed, k):
    full = rng.raw_stream(seed, 60)
    assert np.array_equal(rng.raw_stream(seed, 10, offset=k), full[k:k + 10])


@given(U64)
def test_uniform_range(seed):
    u = rng.uniform(seed, 200)
    assert np.all((u >= 0) & (u < 1))
    v = rng.uniform_range(seed, 200, -2.0, 3.0)
    assert np.all((v >= -2) & (v < 3))


def test_derive_seed():
    assert rng.derive_seed(5) == 5
    assert rng.derive_seed(5, 1, 2) == rng.derive_seed(rng.derive_seed(5, 1), 2)
    kids = {rng.derive_seed(5, n, i) for n in range(1, 9) for i in range(n)}
    assert len(kids) == sum(range(1, 9))
    assert rng.derive_seed(5, 1, 0) != rng.derive_seed(6, 1, 0)


def test_simplex():
    lam = rng.simplex(3, 2000, 4)
    assert lam.shape == (2000, 4)
    assert np.all(lam > 0)
    assert np.allclose(lam.sum(axis=1), 1, atol=1e-12)
    # uniform on the simplex: each coordinate is Beta(1, 3) with mean 1/4
    assert np.allclose(lam.mean(axis=0), 0.25, atol=0.02)
    assert np.array_equal(lam, rng.simplex(3, 2000, 4))
