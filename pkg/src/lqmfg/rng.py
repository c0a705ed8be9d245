"""Counter-based Philox4x32-10 generator (numpy reference implementation).

Every random number is a pure function of ``(key, counter)``, so a draw can be
addressed directly by ``(step, path, player stream, block)`` and ensembles give
identical results however they are split or scheduled.

Two 32-bit outputs make one 52-bit uniform strictly inside (0, 1); a pair of uniforms
gives two standard normals by Box-Muller.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "PHILOX_M0",
    "PHILOX_M1",
    "PHILOX_W0",
    "PHILOX_W1",
    "INIT_STEP",
    "philox4x32",
    "seed_key",
    "uniforms",
    "normals",
]

PHILOX_M0 = 0xD2511F53
PHILOX_M1 = 0xCD9E8D57
PHILOX_W0 = 0x9E3779B9
PHILOX_W1 = 0xBB67AE85
ROUNDS = 10

# step word reserved for initial-state draws
INIT_STEP = 0xFFFFFFFF

_MASK32 = np.uint64(0xFFFFFFFF)


def seed_key(seed: int) -> tuple:
    """Split a 64-bit seed into the two 32-bit key words."""
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return seed & 0xFFFFFFFF, seed >> 32


def _mulhilo(a, m):
    p = a.astype(np.uint64) * np.uint64(m)
    return (p >> np.uint64(32)).astype(np.uint32), (p & _MASK32).astype(np.uint32)


def philox4x32(counter, key) -> np.ndarray:
    """Apply Philox4x32-10 to counters of shape ``(..., 4)`` with a 2-word key."""
    c = np.asarray(counter, dtype=np.uint32)
    c0, c1, c2, c3 = (c[..., i].copy() for i in range(4))
    k0, k1 = np.uint32(key[0]), np.uint32(key[1])
    with np.errstate(over="ignore"):
        for r in range(ROUNDS):
            if r:
                k0 = np.uint32((int(k0) + PHILOX_W0) & 0xFFFFFFFF)
                k1 = np.uint32((int(k1) + PHILOX_W1) & 0xFFFFFFFF)
            hi0, lo0 = _mulhilo(c0, PHILOX_M0)
            hi1, lo1 = _mulhilo(c2, PHILOX_M1)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return np.stack([c0, c1, c2, c3], axis=-1)


def _to_unit(a, b):
    x = (a.astype(np.uint64) >> np.uint64(6)) * np.uint64(1 << 26) + (b.astype(np.uint64) >> np.uint64(6))
    return (x.astype(np.float64) + 0.5) * (1.0 / 4503599627370496.0)


def uniforms(words) -> np.ndarray:
    """Map Philox output ``(..., 4)`` to two uniforms ``(..., 2)`` in (0, 1)."""
    w = np.asarray(words, dtype=np.uint32)
    return np.stack([_to_unit(w[..., 0], w[..., 1]), _to_unit(w[..., 2], w[..., 3])], axis=-1)


def _box_muller(u):
    r = np.sqrt(-2.0 * np.log(u[..., 0]))
    phi = 2.0 * np.pi * u[..., 1]
    return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)


def normals(seed: int, step, path, stream, count: int) -> np.ndarray:
    """Standard normals addressed by ``(step, path, stream)``.

    The three address arguments broadcast together; the result has their
    broadcast shape plus a trailing axis of length ``count``.
    """
    key = seed_key(seed)
    step, path, stream = np.broadcast_arrays(
        np.asarray(step, dtype=np.uint32), np.asarray(path, dtype=np.uint32),
        np.asarray(stream, dtype=np.uint32))
    nblocks = (count + 1) // 2
    blocks = np.arange(nblocks, dtype=np.uint32)
    ctr = np.stack(np.broadcast_arrays(step[..., None], path[..., None],
                                       stream[..., None], blocks), axis=-1)
    z = _box_muller(uniforms(philox4x32(ctr, key)))
    return z.reshape(z.shape[:-2] + (2 * nblocks,))[..., :count]
