"""Deterministic random streams built on splitmix64.

Every stochastic choice in this package (trajectory shapes, measurement
noise, fault draws, weight initialisation, shuffling) goes through
:class:`Stream` so that one 64-bit seed pins down every produced byte,
independent of platform, numpy version, or call batching.  The generator is
spelled out below so an independent implementation can reproduce the exact
sample sequences.

Generator
---------
splitmix64 keeps a 64-bit state and advances it by the golden-ratio
increment ``GAMMA = 0x9E3779B97F4A7C15``.  Output ``i`` (0-based) of a
stream seeded with ``s`` is ``mix(s + (i + 1) * GAMMA) mod 2**64`` where
``mix`` is the finaliser::

    z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27;  z *= 0x94D049BB133111EB
    z ^= z >> 31

Because the state step is a plain counter, a block of outputs can be
produced with vectorised uint64 arithmetic and is identical to repeated
scalar calls.

Derived draws
-------------
* uniform doubles take the top 53 bits: ``u = (z >> 11) * 2**-53``,
  uniform on [0, 1).
* standard normals apply the Box-Muller transform to consecutive uniform
  pairs ``(u1, u2)``: ``r = sqrt(-2 ln(1 - u1))``, then ``r cos(2 pi u2)``
  followed by ``r sin(2 pi u2)``.  ``1 - u1`` lies in (0, 1] so the log is
  always finite.
* integers on [lo, hi] use ``lo + floor(u * (hi - lo + 1))``; the floor
  bias is negligible at the range sizes used here and keeps the mapping
  trivial to port.
* sub-seeds for independent streams come from :func:`derive_seed`, which
  hashes a list of string/integer labels with FNV-1a 64 and mixes the
  result into the parent seed with the splitmix64 finaliser.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_U53_SCALE = float(2.0**-53)


def _mix(z: int) -> int:
    z &= _MASK
    z ^= z >> 30
    z = (z * _MIX1) & _MASK
    z ^= z >> 27
    z = (z * _MIX2) & _MASK
    z ^= z >> 31
    return z


def derive_seed(seed: int, *labels: str | int) -> int:
    """Derive an independent child seed from ``seed`` and a label path.

    Labels are hashed with FNV-1a 64 (strings as UTF-8, integers as 8
    little-endian bytes, each prefixed with a one-byte type tag) and the
    digest is folded into the parent seed through the splitmix64 finaliser.
    """
    h = _FNV_OFFSET
    for label in labels:
        if isinstance(label, bool) or not isinstance(label, (str, int)):
            raise TypeError(f"seed labels must be str or int, got {label!r}")
        if isinstance(label, str):
            data = b"s" + label.encode("utf-8")
        else:
            data = b"i" + (label & _MASK).to_bytes(8, "little")
        for byte in data:
            h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return _mix(_mix((seed + _GAMMA) & _MASK) ^ h)


class Stream:
    """Sequential splitmix64 stream with scalar and vector draw helpers."""

    def __init__(self, seed: int):
        self._seed = seed & _MASK
        self._count = 0  # outputs consumed so far

    @property
    def seed(self) -> int:
        return self._seed

    def next_u64(self) -> int:
        self._count += 1
        return _mix((self._seed + self._count * _GAMMA) & _MASK)

    def _u64_block(self, n: int) -> np.ndarray:
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        with np.errstate(over="ignore"):
            z = (np.uint64(self._seed) + idx * np.uint64(_GAMMA)).astype(np.uint64)
            z ^= z >> np.uint64(30)
            z *= np.uint64(_MIX1)
            z ^= z >> np.uint64(27)
            z *= np.uint64(_MIX2)
            z ^= z >> np.uint64(31)
        return z

    def uniform(self) -> float:
        """One double uniform on [0, 1)."""
        return (self.next_u64() >> 11) * _U53_SCALE

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` doubles uniform on [0, 1)."""
        if n < 0:
            raise ValueError("n must be non-negative")
        return ((self._u64_block(n) >> np.uint64(11)).astype(np.float64)) * _U53_SCALE

    def normals(self, n: int) -> np.ndarray:
        """``n`` standard normal doubles via Box-Muller on uniform pairs."""
        if n < 0:
            raise ValueError("n must be non-negative")
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs)
        u1 = u[0::2]
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = (2.0 * np.pi) * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def randint(self, lo: int, hi: int) -> int:
        """One integer uniform on the inclusive range [lo, hi]."""
        if hi < lo:
            raise ValueError(f"empty integer range [{lo}, {hi}]")
        span = hi - lo + 1
        return lo + min(span - 1, int(self.uniform() * span))

    def choice(self, weights) -> int:
        """Index drawn with probability proportional to ``weights``."""
        weights = list(weights)
        total = float(sum(weights))
        if total <= 0.0 or any(w < 0 for w in weights):
            raise ValueError("weights must be non-negative and sum > 0")
        u = self.uniform() * total
        acc = 0.0
        for i, w in enumerate(weights):
            acc += w
            if u < acc:
                return i
        return len(weights) - 1

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of ``range(n)`` (argsort of uniforms)."""
        return np.argsort(self.uniforms(n), kind="stable")
