"""Counter-based Gaussian draws (Philox4x32-10).

Every normal variate is a pure function of ``(seed, stream, level, index)``,
so paths can be generated in any order, in any chunking and on any number
of workers and still come out bit-identical.  ``philox4x32`` is a plain
numpy reference of the block function; ``normals`` runs a compiled kernel
that produces the same bits.
"""
from __future__ import annotations

import numba
import numpy as np
from scipy.special import ndtri

_M0 = 0xD2511F53
_M1 = 0xCD9E8D57
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK = 0xFFFFFFFF

# level ids used by pathsim; refinement level l uses REFINE + l
BASE = 0
REFINE = 1
INNER = 0x7F000000


def philox4x32(counter, key, rounds: int = 10):
    """Reference Philox4x32 block function on uint32-valued arrays."""
    mask = np.uint64(_MASK)
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & mask for c in counter)
    k0, k1 = (np.asarray(k, dtype=np.uint64) & mask for k in key)
    for r in range(rounds):
        if r:
            k0 = (k0 + np.uint64(_W0)) & mask
            k1 = (k1 + np.uint64(_W1)) & mask
        p0 = np.uint64(_M0) * c0
        p1 = np.uint64(_M1) * c2
        c0, c1, c2, c3 = ((p1 >> np.uint64(32)) ^ c1 ^ k0, p1 & mask,
                          (p0 >> np.uint64(32)) ^ c3 ^ k1, p0 & mask)
    return c0, c1, c2, c3


@numba.njit(cache=True)
def _uniforms(seed_lo, seed_hi, streams, level, first, nblocks, out):
    mask = np.uint64(_MASK)
    s32 = np.uint64(32)
    for p in range(streams.shape[0]):
        s = streams[p]
        for b in range(nblocks):
            c0 = np.uint64(first + b) & mask
            c1 = np.uint64(level) & mask
            c2 = s & mask
            c3 = s >> s32
            k0 = np.uint64(seed_lo)
            k1 = np.uint64(seed_hi)
            for r in range(10):
                if r > 0:
                    k0 = (k0 + np.uint64(_W0)) & mask
                    k1 = (k1 + np.uint64(_W1)) & mask
                p0 = np.uint64(_M0) * c0
                p1 = np.uint64(_M1) * c2
                n0 = (p1 >> s32) ^ c1 ^ k0
                n2 = (p0 >> s32) ^ c3 ^ k1
                c1 = p1 & mask
                c3 = p0 & mask
                c0 = n0
                c2 = n2
            # 27 + 26 random bits; the +0.5 keeps u strictly inside (0, 1)
            out[p, 2 * b] = ((c0 >> np.uint64(5)) * 67108864.0
                             + (c1 >> np.uint64(6)) + 0.5) / 9007199254740992.0
            out[p, 2 * b + 1] = ((c2 >> np.uint64(5)) * 67108864.0
                                 + (c3 >> np.uint64(6)) + 0.5) / 9007199254740992.0


def uniforms(seed: int, streams, level: int, count: int, start: int = 0) -> np.ndarray:
    """Uniforms on (0, 1), shape ``(len(streams), count)``."""
    streams = np.ascontiguousarray(np.atleast_1d(streams), dtype=np.uint64)
    if count <= 0:
        return np.zeros((streams.size, 0))
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    first, last = start // 2, (start + count - 1) // 2
    nb = last - first + 1
    out = np.empty((streams.size, 2 * nb))
    _uniforms(seed & _MASK, seed >> 32, streams, int(level), first, nb, out)
    off = start - 2 * first
    return out[:, off:off + count]


def normals(seed: int, streams, level: int, count: int, start: int = 0) -> np.ndarray:
    """Standard normals; draw ``j`` of a row is variate ``start + j`` of the
    sequence keyed by ``(seed, stream, level)``."""
    return ndtri(uniforms(seed, streams, level, count, start))
