"""Counter-based deterministic random streams.

Two flavours are used throughout the project:

* ``stream(key...)`` returns a numpy ``Generator`` backed by Philox, a
  counter-based engine, so independent streams can be derived from integer
  keys without any shared state.  Scene generation and parameter
  initialisation draw from such streams.
* ``uniform_field(...)`` hashes ``(seed, pillar, row)`` tuples straight to
  uniform doubles with a splitmix64 finalizer.  The value of one slot never
  depends on how many other slots were drawn, which keeps per-pillar point
  generation bit-identical no matter how pillars are scheduled.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Generator, Philox

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def mix64(*parts: int) -> int:
    """Collapse integer key parts into one 64-bit value (order-sensitive)."""
    h = np.uint64(0x8EF2ACE6A1D9D1C3)
    for p in parts:
        h = _splitmix(h ^ (np.uint64(p) & _MASK))
    return int(h)


def _splitmix(x: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    x = (x + _GOLDEN) & _MASK
    x = ((x ^ (x >> np.uint64(30))) * _MIX1) & _MASK
    x = ((x ^ (x >> np.uint64(27))) * _MIX2) & _MASK
    return x ^ (x >> np.uint64(31))


def stream(*key: int) -> Generator:
    """Independent Philox stream for the given integer key tuple."""
    k0 = mix64(*key)
    k1 = mix64(k0, *key)
    return Generator(Philox(key=np.array([k0, k1], dtype=np.uint64)))


def uniform_field(seed: int, pillar: int, n: int) -> np.ndarray:
    """Uniform [0, 1) doubles for rows 0..n-1 of one pillar.

    Pure function of (seed, pillar, row): parallel and serial pillar
    schedules produce identical values.
    """
    rows = np.arange(n, dtype=np.uint64)
    h = np.uint64(mix64(seed, pillar))
    z = _splitmix((rows ^ h) & _MASK)
    z = _splitmix((z + h) & _MASK)
    return (z >> np.uint64(11)).astype(np.float64) * (2.0**-53)
