"""Counter-based random streams usable inside numba kernels.

Every walk and every training call gets its own SplitMix64 stream whose seed
is a hash of (base seed, stream index), so results do not depend on the
order in which streams are consumed.
"""
import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def stream_seed(base, a, b):
    """Seed for stream ``(a, b)`` under ``base``."""
    s = mix64(np.uint64(base) + _GOLDEN * np.uint64(a + 1))
    return mix64(s + _GOLDEN * np.uint64(b + 1) + np.uint64(0x632BE59BD9B4E019))


@njit(cache=True, inline="always")
def next_u64(state):
    """Returns ``(new_state, value)``."""
    state = state + _GOLDEN
    return state, mix64(state)


@njit(cache=True, inline="always")
def next_float(state):
    """Uniform double in [0, 1)."""
    state, x = next_u64(state)
    return state, np.float64(x >> np.uint64(11)) * _INV53


@njit(cache=True, inline="always")
def next_below(state, n):
    """Uniform integer in [0, n)."""
    state, u = next_float(state)
    k = np.int64(u * n)
    if k >= n:
        k = n - 1
    return state, k


def draw_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1, dtype=np.int64))
