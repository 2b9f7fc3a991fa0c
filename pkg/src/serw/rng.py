"""Counter-based random streams.

Each walker gets a private SplitMix64 stream whose starting state is derived
from ``(master_seed, walker_index)``. Output ``i`` of a stream is a pure
function of the key and ``i``, so streams can be evaluated in any order, on
any thread, and the Python and compiled code paths see identical numbers.
"""

import numba as nb
import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_TO_UNIT = 1.0 / 9007199254740992.0  # 2**-53


def mix64(z):
    """SplitMix64 output finaliser on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def walker_key(master_seed, walker):
    return mix64((mix64(master_seed) + (walker + 1) * GOLDEN) & MASK64)


class CounterStream:
    """Sequential view of one walker's counter-based stream.

    >>> s = CounterStream(42, 0)
    >>> a = s.random(); s.seek(0); a == s.random()
    True
    """

    def __init__(self, master_seed, walker=0, *, key=None):
        self.key = walker_key(master_seed, walker) if key is None else key & MASK64
        self.counter = 0

    def seek(self, counter):
        self.counter = int(counter)

    def raw(self):
        self.counter += 1
        return mix64((self.key + self.counter * GOLDEN) & MASK64)

    def random(self):
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.raw() >> 11) * _TO_UNIT


# -- compiled counterparts -----------------------------------------------------

_U_GOLDEN = np.uint64(GOLDEN)


@nb.njit(inline="always")
def nb_mix64(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


@nb.njit(inline="always")
def nb_raw(key, counter):
    return nb_mix64(key + counter * _U_GOLDEN)


@nb.njit(inline="always")
def nb_uniform(key, counter):
    return np.float64(nb_raw(key, counter) >> np.uint64(11)) * _TO_UNIT


def walker_keys(master_seed, n_walkers):
    return np.array([walker_key(master_seed, w) for w in range(n_walkers)], dtype=np.uint64)
