"""Deterministic, splittable random-number streams.

Every stream is a pure function of ``(seed, stream_id, counter)``: the i-th
output is a SplitMix64-style hash of ``key(seed, stream_id)`` and
``counter + i``, so identical triples reproduce identical sequences on any
platform and a single draw of ``n`` elements advances the counter by exactly
``n``.  ``fork`` derives child streams whose sequences are statistically
independent of the parent and of each other, which is what makes Monte-Carlo
passes order-independent.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

from .errors import ParameterError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB

_GOLDEN_U64 = np.uint64(_GOLDEN)
_TWO_NEG_53 = float(2.0 ** -53)


def _mix64(z: int) -> int:
    """SplitMix64 finalizer on Python ints (wraps mod 2**64)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    # uint64 array version; numpy unsigned arithmetic wraps silently.
    # Mutates z in place -- callers only pass freshly allocated buffers.
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX_A)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX_B)
    z ^= z >> np.uint64(31)
    return z


def _shape_size(shape) -> int:
    size = 1
    for dim in shape:
        size *= int(dim)
    return size


class RngStream:
    """Counter-based random stream identified by ``(seed, stream_id, counter)``."""

    __slots__ = ("seed", "stream_id", "counter", "_key")

    def __init__(self, seed: int, stream_id: int = 0, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self.counter = int(counter)
        self._key = _mix64(_mix64(self.seed) ^ ((self.stream_id * _GOLDEN) & _MASK64))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    def fork(self, index: int) -> "RngStream":
        """Child stream `index`; children of one parent are mutually independent."""
        child_id = _mix64(_mix64(self.stream_id ^ self.seed) + ((int(index) + 1) * _GOLDEN & _MASK64))
        return RngStream(self.seed, child_id)

    def _raw(self, n: int) -> np.ndarray:
        """n hashed uint64 words; advances the counter by exactly n."""
        words = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        words *= _GOLDEN_U64
        words += np.uint64(self._key)
        return _mix64_array(words)

    def _uniform01(self, n: int) -> np.ndarray:
        # 53-bit mantissa uniforms in [0, 1)
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray:
        """I.i.d. draws from U[low, high); requires low < high."""
        if not low < high:
            raise ParameterError(f"uniform requires low < high, got [{low}, {high})")
        u = self._uniform01(_shape_size(shape))
        return (low + (high - low) * u).reshape(shape)

    def bernoulli(self, prob: float, shape=()) -> np.ndarray:
        """I.i.d. {0.0, 1.0} draws taking 1 with probability `prob`."""
        if not 0.0 <= prob <= 1.0:
            raise ParameterError(f"bernoulli probability must be in [0, 1], got {prob}")
        u = self._uniform01(_shape_size(shape))
        return (u < prob).astype(np.float64).reshape(shape)

    def normal(self, mu: float, sigma: float, shape=()) -> np.ndarray:
        """I.i.d. N(mu, sigma^2) draws via the inverse CDF (one draw per element)."""
        if sigma < 0.0:
            raise ParameterError(f"normal requires sigma >= 0, got {sigma}")
        n = _shape_size(shape)
        # shift into the open interval (0, 1) so ndtri stays finite
        u = ((self._raw(n) >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_NEG_53
        return (mu + sigma * ndtri(u)).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Uniform random permutation of range(n); consumes n counter slots."""
        return np.argsort(self._uniform01(n), kind="stable")
