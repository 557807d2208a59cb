"""Counter-based 64-bit random numbers.

Every value is a pure function of ``(seed, stream, counter)``, so streams can
be split across workers and replayed in any order.  The construction is the
SplitMix64 output function applied to a Weyl sequence:

    key    = mix(mix(seed) ^ mix(stream + STREAM_SALT))
    x_c    = mix(key + GOLDEN_GAMMA * (c + 1))          (mod 2**64)

    mix(z): z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
            z = (z ^ (z >> 27)) * 0x94D049BB133111EB
            z =  z ^ (z >> 31)

Uniforms take the top 53 bits of ``x_c``.  Normals use Box-Muller on
consecutive counters ``(2m, 2m + 1)``, yielding two variates per pair.
"""

import numpy as np

GOLDEN_GAMMA = 0x9E3779B97F4A7C15
STREAM_SALT = 0xD1B54A32D192ED03
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1
_TWO_M53 = 2.0**-53


def mix64(z):
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_key(seed, stream=0):
    s = mix64(np.uint64(int(seed) & _MASK64))
    t = mix64(np.uint64((int(stream) + STREAM_SALT) & _MASK64))
    return int(mix64(s ^ t))


class CounterRNG:
    """Deterministic generator for one ``(seed, stream)`` pair.

    Draws consume counters sequentially from ``counter``; the same sequence of
    calls always yields the same numbers on every platform.
    """

    def __init__(self, seed, stream=0, counter=0):
        if int(seed) < 0:
            raise ValueError("seed must be a non-negative integer")
        self.seed = int(seed)
        self.stream = int(stream)
        self.counter = int(counter)
        self._key = np.uint64(stream_key(self.seed, self.stream))

    def spawn(self, stream):
        """Independent generator for another stream of the same seed."""
        return CounterRNG(self.seed, stream)

    def random_raw(self, n):
        c = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return mix64(self._key + np.uint64(GOLDEN_GAMMA) * c)

    def uniform(self, size=None):
        """Uniform variates on ``[0, 1)``."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.random_raw(n) >> np.uint64(11)).astype(np.float64) * _TWO_M53
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None):
        """Standard normal variates."""
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        raw = (self.random_raw(2 * pairs) >> np.uint64(11)).astype(np.float64)
        u1 = (raw[0::2] + 1.0) * _TWO_M53  # (0, 1], keeps log finite
        u2 = raw[1::2] * _TWO_M53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return float(z[0]) if size is None else z[:n].reshape(size)

    def permutation(self, n):
        return np.argsort(self.uniform(n), kind="stable")
