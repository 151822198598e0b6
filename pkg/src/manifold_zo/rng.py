"""Counter-addressable random streams for reproducible Monte Carlo.

Every random quantity in this package is a pure function of an integer seed,
a small integer path (which subsystem / which iteration), and a slot index.
Two properties follow:

* re-running with the same seed reproduces every draw bit-for-bit, and
* any contiguous slice of a stream can be regenerated without generating
  what precedes it, so batches may be split across workers and still match
  a serial run exactly.

Streams are backed by Philox (a counter-based generator); normals are
produced by inverse-CDF transform so each value consumes exactly one raw
64-bit output and slot arithmetic stays exact.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

__all__ = [
    "NormalStream",
    "key_normals",
    "key_uniforms",
    "key_indices",
    "pairwise_sum",
]

# Philox emits raw 64-bit outputs in blocks of 4 per counter increment;
# ``advance(k)`` skips k blocks, i.e. 4k raw values.
_RAW_PER_BLOCK = 4

_U64 = np.uint64
_TO_UNIT = 2.0**-53
_HALF_ULP = 2.0**-54


def _bitgen(seed: int, path: tuple[int, ...]) -> np.random.Philox:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Philox(ss)


def _raw_to_uniform(raw: np.ndarray) -> np.ndarray:
    # top 53 bits -> double in (0, 1); offset keeps ndtri finite
    return (raw >> _U64(11)).astype(np.float64) * _TO_UNIT + _HALF_ULP


class NormalStream:
    """Stream of i.i.d. standard normals addressed by absolute slot index.

    ``NormalStream(seed, path).normals(a, n)`` equals the slice ``[a:a+n]``
    of the infinite sequence determined by ``(seed, path)``, independent of
    how the sequence is partitioned into requests.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)

    def raw(self, start: int, count: int) -> np.ndarray:
        if count < 0 or start < 0:
            raise ValueError("stream slots must be nonnegative")
        block, skip = divmod(int(start), _RAW_PER_BLOCK)
        bg = _bitgen(self.seed, self.path)
        if block:
            bg.advance(block)
        vals = bg.random_raw(skip + int(count))
        return vals[skip:]

    def uniforms(self, start: int, count: int) -> np.ndarray:
        return _raw_to_uniform(self.raw(start, count))

    def normals(self, start: int, count: int) -> np.ndarray:
        return ndtri(self.uniforms(start, count))

    def generator(self) -> np.random.Generator:
        """Ordinary numpy Generator on this stream (for non-addressed use)."""
        return np.random.Generator(_bitgen(self.seed, self.path))


def _splitmix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
        return z ^ (z >> _U64(31))


def _mix(seed: int, keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = _splitmix(np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF)], dtype=np.uint64))[0]
        return _splitmix((keys + _U64(0x9E3779B97F4A7C15)) ^ base)


def key_uniforms(seed: int, keys: np.ndarray) -> np.ndarray:
    """Stateless uniform(0,1) variates, one per integer key."""
    return _raw_to_uniform(_mix(seed, keys))


def key_normals(seed: int, keys: np.ndarray) -> np.ndarray:
    """Stateless standard-normal variates, one per integer key."""
    return ndtri(key_uniforms(seed, keys))


def key_indices(seed: int, keys: np.ndarray, size: int) -> np.ndarray:
    """Stateless indices in ``[0, size)``, one per integer key."""
    if size < 1:
        raise ValueError("size must be >= 1")
    return (_mix(seed, keys) % _U64(size)).astype(np.int64)


def pairwise_sum(terms: np.ndarray) -> np.ndarray:
    """Sum along axis 0 by index-ordered pairwise reduction.

    The reduction tree is a pure function of the term count, so the result
    does not depend on how the terms were produced or partitioned.
    """
    terms = np.asarray(terms)
    if terms.shape[0] == 0:
        return np.zeros(terms.shape[1:], dtype=terms.dtype)
    while terms.shape[0] > 1:
        n = terms.shape[0]
        half = n // 2
        merged = terms[0 : 2 * half : 2] + terms[1 : 2 * half : 2]
        if n % 2:
            merged = np.concatenate([merged, terms[n - 1 : n]], axis=0)
        terms = merged
    return terms[0]
