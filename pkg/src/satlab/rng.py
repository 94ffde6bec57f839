"""Counter-based SplitMix64 generator.

Every random stream in satlab is a pure function of a 64-bit seed. Draw ``i``
of a stream seeded with ``s`` is ``mix64(s + (i + 1) * GOLDEN)``, so streams can
be evaluated in any order or in parallel with identical results.

Child seeds are derived with :func:`derive_seed`, which folds an index path into
the parent seed::

    child = mix64(parent ^ mix64((index + 1) * GOLDEN))

applied once per index in the path. Ensemble member ``i`` of split ``n`` under
base seed ``b`` therefore gets ``derive_seed(b, n, i)``.
"""
import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z):
    """SplitMix64 finaliser on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive_seed(parent, *path):
    s = int(parent) & MASK64
    for idx in path:
        s = mix64(s ^ mix64(((int(idx) + 1) * GOLDEN) & MASK64))
    return s


def raw_stream(seed, n, offset=0):
    """``n`` uint64 draws starting at counter ``offset``."""
    seed = np.uint64(int(seed) & MASK64)
    ctr = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = seed + ctr * np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def uniform(seed, n, offset=0):
    """Doubles in [0, 1) with 53 random bits each."""
    return (raw_stream(seed, n, offset) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def uniform_range(seed, n, low, high, offset=0):
    return low + (high - low) * uniform(seed, n, offset)


def simplex(seed, trials, k):
    """``trials`` points drawn uniformly from the (k-1)-simplex, shape (trials, k)."""
    u = uniform(seed, trials * k).reshape(trials, k)
    e = -np.log1p(-u)  # Exp(1); 1 - u lies in (0, 1]
    return e / e.sum(axis=1, keepdims=True)
