"""Deterministic random streams keyed by (seed, run_index, lane).

Each run owns an independent xoshiro256** generator whose 256-bit state is
filled by splitmix64 from a key mixing the master seed, the run index and a
lane number.  Lane 0 feeds the driving increments; other lanes feed
auxiliary draws (for instance bridge minima) so that adding an auxiliary
draw never perturbs the driving path of a run.

The generators are plain uint64 arrays manipulated by numba functions so
they can be created inside compiled kernels without Python overhead.
"""

import numba as nb
import numpy as np

MASK64 = (1 << 64) - 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_RUN_MUL = np.uint64(0xD1B54A32D192ED03)
_LANE_MUL = np.uint64(0x8CB92BA72F3D8DD7)
_TWO_M53 = 2.0 ** -53

LANE_DRIVING = 0
LANE_BRIDGE = 1
LANE_SPLIT = 2


@nb.njit(inline="always")
def _splitmix(z):
    z = z + _GOLDEN
    r = z
    r = (r ^ (r >> np.uint64(30))) * _MIX1
    r = (r ^ (r >> np.uint64(27))) * _MIX2
    return z, r ^ (r >> np.uint64(31))


@nb.njit(inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@nb.njit(cache=True)
def stream_state(seed, run, lane):
    """Return the xoshiro256** state (uint64[4]) for one (seed, run, lane)."""
    st = np.empty(4, np.uint64)
    z, a = _splitmix(np.uint64(seed))
    z, b = _splitmix(a ^ (np.uint64(run) * _RUN_MUL))
    z = b ^ (np.uint64(lane) * _LANE_MUL)
    for i in range(4):
        z, st[i] = _splitmix(z)
    return st


@nb.njit(inline="always")
def next_u64(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@nb.njit(inline="always")
def uniform(s):
    """Uniform double on (0, 1] with 53 random bits."""
    return (float(next_u64(s) >> np.uint64(11)) + 1.0) * _TWO_M53


@nb.njit(inline="always")
def normal(s, cache):
    """Standard normal by Box-Muller; cache[0] flags a stored sine partner."""
    if cache[0] != 0.0:
        cache[0] = 0.0
        return cache[1]
    u1 = uniform(s)
    u2 = uniform(s)
    r = np.sqrt(-2.0 * np.log(u1))
    th = 2.0 * np.pi * u2
    cache[0] = 1.0
    cache[1] = r * np.sin(th)
    return r * np.cos(th)


def u64(v):
    """Kernel argument for a seed or run index (numba would type a Python int as int64)."""
    return np.uint64(check_seed(v))


def normals(seed, run, n):
    """n standard normals from the driving lane of (seed, run)."""
    return _normals(u64(seed), u64(run), int(n))


def raw_u64(seed, run, lane, n):
    return _raw_u64(u64(seed), u64(run), int(lane), int(n))


@nb.njit(cache=True)
def _normals(seed, run, n):
    s = stream_state(seed, run, LANE_DRIVING)
    cache = np.zeros(2)
    out = np.empty(n)
    for i in range(n):
        out[i] = normal(s, cache)
    return out


@nb.njit(cache=True)
def _raw_u64(seed, run, lane, n):
    s = stream_state(seed, run, lane)
    out = np.empty(n, np.uint64)
    for i in range(n):
        out[i] = next_u64(s)
    return out


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed
