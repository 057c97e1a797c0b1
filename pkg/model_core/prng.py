"""SplitMix64, in scalar form for schedule traces and vectorised for noise streams.

    state' = state + 0x9E3779B97F4A7C15            (mod 2**64)
    z = (state' ^ (state' >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)

Any implementation following these four lines reproduces the traces bit-exactly.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX_1 = 0xBF58476D1CE4E5B9
_MIX_2 = 0x94D049BB133111EB
_TWO_NEG_53 = 1.0 / (1 << 53)


def splitmix64(state: int) -> tuple[int, int]:
    """Advance `state` once; returns (new_state, output)."""
    state = (state + GOLDEN_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * _MIX_1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX_2) & MASK64
    return state, z ^ (z >> 31)


def mix64(counters: np.ndarray) -> np.ndarray:
    """Stateless SplitMix64 output for each uint64 counter."""
    z = counters.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z += np.uint64(GOLDEN_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_2)
    return z ^ (z >> np.uint64(31))


def uniform_from_bits(bits: np.ndarray) -> np.ndarray:
    """Top 53 bits as a double in [0, 1)."""
    return (bits >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53


def stream_key(seed: int) -> int:
    return splitmix64(seed & MASK64)[1]


def gaussian_block(seed: int, indices: np.ndarray, dim: int) -> np.ndarray:
    """Standard normals addressed by (seed, sample index, coordinate).

    Row `r` depends only on `seed`, `indices[r]` and `dim`, so any sample of the
    stream can be regenerated in isolation, by any worker, in any order.

    Box-Muller over counter-based SplitMix64 is written out here because the
    noise has to be a bit-exact function of the SplitMix64 stream that also
    drives the schedule traces. `numpy.random.Generator` is sequential and its
    normal sampler is not specified bit for bit, so it cannot serve random
    access by sample index. Everything that only needs *some* random numbers
    (weight init, label noise, shuffling) uses `numpy.random.default_rng`.
    """
    indices = np.asarray(indices, dtype=np.uint64).reshape(-1)
    lanes = np.arange(2 * dim, dtype=np.uint64)
    with np.errstate(over="ignore"):
        counters = (
            np.uint64(stream_key(seed))
            + indices[:, None] * np.uint64(2 * dim)
            + lanes[None, :]
        )
    uniforms = uniform_from_bits(mix64(counters))
    radius = np.sqrt(-2.0 * np.log1p(-uniforms[:, :dim]))
    angle = 2.0 * np.pi * uniforms[:, dim:]
    return radius * np.cos(angle)
