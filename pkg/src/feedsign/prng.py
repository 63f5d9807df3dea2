"""Counter-based Gaussian streams shared by every simulated device.

Each stream is keyed by a 64-bit seed.  Raw word ``i`` of a stream is the
SplitMix64 finalizer applied to ``key + (i + 1) * GAMMA`` (mod 2**64), so any
position can be computed without touching the ones before it.  Two separate
key domains are derived from the seed, one feeding normal variates and one
feeding uniform variates::

    key_normal  = mix64(seed ^ NORMAL_TAG)
    key_uniform = mix64(seed ^ UNIFORM_TAG)

Uniforms are taken from the top 53 bits of a word and land in (0, 1]::

    u = ((word >> 11) + 1) * 2**-53

Normal sample ``i`` comes from Box-Muller on the pair of normal-domain words
``(2 * (i // 2), 2 * (i // 2) + 1)``::

    r = sqrt(-2 * log(u1)),  theta = 2 * pi * u2
    sample(2j) = r * cos(theta),  sample(2j + 1) = r * sin(theta)

``log``, ``cos`` and ``sin`` are evaluated with fixed polynomials using only
IEEE-754 basic operations (see ``_log`` and ``_cos_sin_turn``) instead of the
platform maths library, whose last-bit results vary with the CPU and numpy
build.  That keeps regenerated directions, and therefore orbit replay,
bit-identical across machines.

Because every sample is a function of ``(seed, position)`` only, the second
variate of a pair never needs caching: a stream's ``counter`` is simply the
number of samples drawn, and a draw of ``n`` samples always advances it by
exactly ``n`` (``n = 0`` leaves it where it was).  Uniform and normal draws
share the counter; each position is consumed once by whichever kind of draw
reaches it first.
"""

from __future__ import annotations

import functools
import math

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
NORMAL_TAG = 0x6E6F726D616C2D7A  # "normal-z"
UNIFORM_TAG = 0x756E69666F726D2D  # "uniform-"

# Directions longer than this are generated block by block.
CHUNK = 1 << 16

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GAMMA = np.uint64(GAMMA)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_TWO_M53 = 2.0**-53

# ln 2 split so that e * _LN2_HI is exact for |e| < 2**11
_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_SQRT_HALF = 0.70710678118654752440
_HALF_PI = 1.5707963267948966
# log(m) = s * sum 2 s^(2k) / (2k + 1), s = (m - 1) / (m + 1), |s| < 0.172
_LOG_COEF = tuple(2.0 / (2 * k + 1) for k in range(13, -1, -1))
# Taylor series on |x| <= pi / 4
_SIN_COEF = tuple((-1) ** k / math.factorial(2 * k + 1) for k in range(10, -1, -1))
_COS_COEF = tuple((-1) ** k / math.factorial(2 * k) for k in range(10, -1, -1))


def mix64(x: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(*parts: int | str) -> int:
    """Hash a tuple of integers and short tags into a 64-bit seed.

    ``h = mix64(GAMMA)``, then for each part ``h = mix64(h ^ part + GAMMA)``;
    strings are folded in byte by byte through the same step first.
    """
    h = mix64(GAMMA)
    for part in parts:
        if isinstance(part, str):
            for byte in part.encode():
                h = mix64((h ^ byte) + GAMMA)
            part = len(part)
        h = mix64((h ^ (int(part) & MASK64)) + GAMMA)
    return h


def _mix_array(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> _S30)) * _M1
    x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


def _words(key: int, start: int, count: int) -> np.ndarray:
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    return _mix_array(np.uint64(key) + idx * _GAMMA)


def _to_unit(words: np.ndarray) -> np.ndarray:
    return ((words >> _S11) + np.uint64(1)).astype(np.float64) * _TWO_M53


def _horner(coef, x: np.ndarray) -> np.ndarray:
    acc = np.full_like(x, coef[0])
    for c in coef[1:]:
        acc *= x
        acc += c
    return acc


def _log(u: np.ndarray) -> np.ndarray:
    """Natural log of positive floats, within 2 ulp."""
    m, e = np.frexp(u)
    low = m < _SQRT_HALF
    m = np.where(low, m * 2.0, m)
    e = (e - low).astype(np.float64)
    s = (m - 1.0) / (m + 1.0)
    return e * _LN2_HI + (s * _horner(_LOG_COEF, s * s) + e * _LN2_LO)


def _cos_sin_turn(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """cos(2 pi u) and sin(2 pi u) by quadrant reduction of 4u (exact)."""
    v = u * 4.0
    q = np.floor(v + 0.5)
    x = (v - q) * _HALF_PI
    x2 = x * x
    s = x * _horner(_SIN_COEF, x2)
    c = _horner(_COS_COEF, x2)
    q = q.astype(np.int64) & 3
    odd = (q & 1).astype(bool)
    # quadrant q rotates (c, s) by q * 90 degrees; sign flips are exact
    cos = np.where(odd, s, c)
    sin = np.where(odd, c, s)
    cos[(q == 1) | (q == 2)] *= -1.0
    sin[q >= 2] *= -1.0
    return cos, sin


class DirectionStream:
    """Position-addressable Gaussian/uniform source keyed by a 64-bit seed."""

    __slots__ = ("seed", "counter", "_key_normal", "_key_uniform")

    def __init__(self, seed: int, counter: int = 0):
        if not 0 <= seed <= MASK64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        if counter < 0:
            raise ValueError("counter must be non-negative")
        self.seed = int(seed)
        self.counter = int(counter)
        self._key_normal = mix64(self.seed ^ NORMAL_TAG)
        self._key_uniform = mix64(self.seed ^ UNIFORM_TAG)

    def __repr__(self) -> str:
        return f"DirectionStream(seed={self.seed}, counter={self.counter})"

    def reset(self) -> None:
        self.counter = 0

    def normals(self, n: int) -> np.ndarray:
        """Next ``n`` standard normal samples."""
        if n < 0:
            raise ValueError("sample count must be non-negative")
        out = normals_at(self._key_normal, self.counter, n)
        self.counter += n
        return out

    def uniforms(self, n: int) -> np.ndarray:
        """Next ``n`` uniform samples in (0, 1]."""
        if n < 0:
            raise ValueError("sample count must be non-negative")
        out = _to_unit(_words(self._key_uniform, self.counter, n)) if n else np.empty(0)
        self.counter += n
        return out

    def normal(self) -> float:
        return float(self.normals(1)[0])

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def integers(self, high: int, n: int) -> np.ndarray:
        """``n`` integers in ``[0, high)`` via ``floor(u * high)`` clipped to the range."""
        if high <= 0:
            raise ValueError("high must be positive")
        u = self.uniforms(n)
        return np.minimum((u * high).astype(np.int64), high - 1)


def normals_at(key: int, start: int, n: int) -> np.ndarray:
    """Normal samples at positions ``[start, start + n)`` of a normal-domain key."""
    if n == 0:
        return np.empty(0, dtype=np.float64)
    first_pair = start // 2
    last_pair = (start + n - 1) // 2
    n_pairs = last_pair - first_pair + 1
    words = _words(key, 2 * first_pair, 2 * n_pairs)
    u = _to_unit(words)
    r = np.sqrt(-2.0 * _log(u[0::2]))
    cos, sin = _cos_sin_turn(u[1::2])
    pairs = np.empty(2 * n_pairs, dtype=np.float64)
    pairs[0::2] = r * cos
    pairs[1::2] = r * sin
    offset = start - 2 * first_pair
    return pairs[offset : offset + n]


def make_stream(seed: int) -> DirectionStream:
    """Fresh stream at counter 0.  Seed 0 is an ordinary seed."""
    return DirectionStream(seed)


def gaussian_direction(stream: DirectionStream, dim: int) -> np.ndarray:
    """Draw a length-``dim`` standard normal vector; advances the counter by ``dim``."""
    return stream.normals(dim)


# small directions are memoised: every FeedSign client of a step shares one
# seed, and each ZO-FedSGD direction is drawn again for the update
CACHE_DIM = 4096


@functools.lru_cache(maxsize=128)
def _cached_direction(seed: int, dim: int) -> np.ndarray:
    z = normals_at(mix64(seed ^ NORMAL_TAG), 0, dim)
    z.setflags(write=False)
    return z


def direction(seed: int, dim: int) -> np.ndarray:
    """First ``dim`` normals of ``seed``'s stream.  Read-only when ``dim <= CACHE_DIM``."""
    if dim <= CACHE_DIM:
        return _cached_direction(int(seed), int(dim))
    return normals_at(mix64(int(seed) ^ NORMAL_TAG), 0, dim)


def perturb_in_place(params: np.ndarray, seed: int, scale: float) -> None:
    """``params += scale * z`` with ``z`` regenerated from ``seed``.

    ``z`` is produced in blocks of at most ``CHUNK`` entries, so the extra
    memory is bounded independently of ``len(params)``.  The arithmetic per
    entry is always ``fl(params[i] + fl(scale * z[i]))``, which makes the
    result identical wherever the same update is replayed.
    """
    if params.dtype != np.float64:
        raise TypeError("params must be float64")
    scale = float(scale)
    if scale == 0.0:
        return
    d = params.shape[0]
    if d <= CACHE_DIM:
        params += direction(seed, d) * scale
        return
    key = mix64(int(seed) ^ NORMAL_TAG)
    for lo in range(0, d, CHUNK):
        hi = min(d, lo + CHUNK)
        z = normals_at(key, lo, hi - lo)
        z *= scale
        params[lo:hi] += z
