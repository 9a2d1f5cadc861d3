"""Deterministic random streams with a language-independent definition.

Every stochastic choice in this package draws from the stream defined here,
so any consumer (including one written in another language) can reproduce
noise fields bit-exactly from the integer seed alone.

Stream definition
-----------------
1. Raw words: Philox4x64-10 (Salmon et al. counter-based generator) with
   key = (seed mod 2^64, seed >> 64) and a 256-bit little-endian block
   counter that is incremented once BEFORE each 4-word block is produced.
   The ten rounds use the multipliers M0 = 0xD2E7470EE14C6C93 and
   M1 = 0xCA5A826395121157 on counter words 0 and 2:

       hi0, lo0 = split128(M0 * c0);  hi1, lo1 = split128(M1 * c2)
       c <- (hi1 ^ c1 ^ k0,  lo1,  hi0 ^ c3 ^ k1,  lo0)

   and after every round the key is bumped by the Weyl constants
   k0 += 0x9E3779B97F4A7C15, k1 += 0xBB67AE8584CAA73B. Block words are
   consumed in order (w0, w1, w2, w3), then the counter advances.
2. Uniforms: u = (word >> 11) * 2^-53, giving doubles in [0, 1).
3. Normals: Box-Muller on consecutive uniform pairs (u0, u1):
       r  = sqrt(-2 * ln(1 - u0))      # ln(1 - u0) evaluated as log1p(-u0)
       z0 = r * cos(2*pi*u1),  z1 = r * sin(2*pi*u1)
   For n normals, ceil(n/2) pairs are drawn and the tail value of an odd
   request is discarded.

Steps 1-2 are integer arithmetic and exactly reproducible everywhere. Step 3
is pinned formula-by-formula; its bit pattern additionally depends on the
platform libm for log1p/cos/sin (sqrt is correctly rounded by IEEE-754), the
usual caveat for any normal-variate recipe.

numpy's Philox bit generator implements step 1 exactly (verified against a
from-scratch implementation in the test suite), so uniforms come from
``Generator(Philox(key=seed)).random()`` while the Box-Muller step is
explicit below. numpy's own ``standard_normal`` uses the ziggurat algorithm
and is NOT part of this contract.
"""
from __future__ import annotations

import numpy as np

__all__ = ["uniforms", "normals", "uniform_ints"]


def uniforms(seed: int, count: int) -> np.ndarray:
    """The first `count` uniform doubles of the stream keyed by `seed`."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    gen = np.random.Generator(np.random.Philox(key=seed))
    return gen.random(count)


def normals(seed: int, count: int) -> np.ndarray:
    """The first `count` standard normals of the stream keyed by `seed`."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    pairs = (count + 1) // 2
    u = uniforms(seed, 2 * pairs)
    u0, u1 = u[0::2], u[1::2]
    radius = np.sqrt(-2.0 * np.log1p(-u0))
    angle = 2.0 * np.pi * u1
    out = np.empty(2 * pairs, dtype=np.float64)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out[:count]


def uniform_ints(seed: int, count: int, bound: int) -> np.ndarray:
    """`count` integers in [0, bound) as floor(u * bound) over the uniform stream."""
    if bound <= 0:
        raise ValueError("bound must be positive")
    return np.minimum((uniforms(seed, count) * bound).astype(np.int64), bound - 1)
