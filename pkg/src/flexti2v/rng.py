"""Deterministic, splittable randomness.

Every stochastic draw in the pipeline comes from a substream addressed by a
StreamKey, so results are independent of loop/parallelization order and
bit-identical across runs.  Key derivation is a SplitMix64 chain; generation
is xoshiro256**; normals come from Box-Muller over uniform-(0,1] draws.

Two equivalent code paths exist: scalar ops on Python integers (the
normative definition) and lane-vectorized numpy ops for bulk Monte Carlo
draws.  The test suite pins them to each other bit for bit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_SM_GAMMA = 0x9E3779B97F4A7C15
_SM_MUL1 = 0xBF58476D1CE4E5B9
_SM_MUL2 = 0x94D049BB133111EB

# 2**-53; (0,1] uniforms are ((x >> 11) + 1) * 2**-53 so log() never sees 0
_U53 = 1.0 / 9007199254740992.0


class Purpose(enum.IntEnum):
    """Substream tag; each stochastic role in the pipeline gets its own."""

    INVERSION_NOISE = 1
    MASK = 2
    INIT_NOISE = 3
    STEP_NOISE = 4


@dataclass(frozen=True)
class StreamKey:
    """Address of one substream: (seed, purpose, t, m, n); unused slots are 0."""

    seed: int
    purpose: Purpose
    t: int = 0
    m: int = 0
    n: int = 0

    def __post_init__(self):
        if not 0 <= self.seed <= _MASK64:
            raise ValueError("seed must fit in 64 bits")
        for name in ("t", "m", "n"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class RngState:
    """256-bit xoshiro256** state; advancing returns a new value."""

    s0: int
    s1: int
    s2: int
    s3: int


def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step: returns (advanced state, 64-bit output)."""
    state = (state + _SM_GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * _SM_MUL1) & _MASK64
    z = ((z ^ (z >> 27)) * _SM_MUL2) & _MASK64
    return state, z ^ (z >> 31)


def derive_stream(key: StreamKey) -> RngState:
    """Seed a generator from a StreamKey via a SplitMix64 chain.

    Each field is folded in by XOR-then-mix; the final chain value seeds
    four SplitMix64 outputs that fill the xoshiro256** state.
    """
    acc = key.seed & _MASK64
    for field in (int(key.purpose), key.t, key.m, key.n):
        _, acc = splitmix64(acc ^ (field & _MASK64))
    words = []
    for _ in range(4):
        acc, out = splitmix64(acc)
        words.append(out)
    if not any(words):  # xoshiro must not start all-zero
        words[0] = _SM_GAMMA
    return RngState(*words)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def next_u64(state: RngState) -> tuple[int, RngState]:
    """xoshiro256** step: returns (output, advanced state)."""
    s0, s1, s2, s3 = state.s0, state.s1, state.s2, state.s3
    out = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
    t = (s1 << 17) & _MASK64
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    return out, RngState(s0, s1, s2, s3)


def unit_open(x: int) -> float:
    """Map a u64 draw to a uniform in (0, 1]."""
    return ((x >> 11) + 1) * _U53


def box_muller(u1: float, u2: float) -> tuple[float, float]:
    """Two independent standard normals from uniforms u1, u2 in (0, 1]."""
    r = math.sqrt(-2.0 * math.log(u1))
    theta = 2.0 * math.pi * u2
    return r * math.cos(theta), r * math.sin(theta)


def gauss(state: RngState) -> tuple[float, float, RngState]:
    """Draw two standard normals; always consumes exactly two u64 draws."""
    x1, state = next_u64(state)
    x2, state = next_u64(state)
    z0, z1 = box_muller(unit_open(x1), unit_open(x2))
    return z0, z1, state


def normals(state: RngState, count: int) -> tuple[np.ndarray, RngState]:
    """Draw `count` standard normals (float64) from one stream."""
    out = np.empty(count, dtype=np.float64)
    i = 0
    while i < count:
        z0, z1, state = gauss(state)
        out[i] = z0
        if i + 1 < count:
            out[i + 1] = z1
        i += 2
    return out, state


# ---------------------------------------------------------------------------
# Lane-vectorized path: many independent streams advanced in lockstep.
# Per-lane sequences are bit-identical to the scalar path above.
# ---------------------------------------------------------------------------

_U64 = np.uint64


@dataclass(frozen=True)
class RngBlock:
    """State of n independent streams, one per lane."""

    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray

    @property
    def lanes(self) -> int:
        return self.s0.shape[0]


def _splitmix64_block(state: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    state = state + _U64(_SM_GAMMA)
    z = state.copy()
    z = (z ^ (z >> _U64(30))) * _U64(_SM_MUL1)
    z = (z ^ (z >> _U64(27))) * _U64(_SM_MUL2)
    return state, z ^ (z >> _U64(31))


def derive_stream_block(
    seeds, purpose: Purpose, t=0, m=0, n=0
) -> RngBlock:
    """Vectorized derive_stream; arguments broadcast against each other."""
    fields = np.broadcast_arrays(
        np.asarray(seeds, dtype=_U64),
        _U64(int(purpose)),
        np.asarray(t, dtype=_U64),
        np.asarray(m, dtype=_U64),
        np.asarray(n, dtype=_U64),
    )
    acc = fields[0].ravel().copy()
    for field in fields[1:]:
        _, acc = _splitmix64_block(acc ^ field.ravel())
    words = []
    for _ in range(4):
        acc, out = _splitmix64_block(acc)
        words.append(out)
    dead = ~(words[0] | words[1] | words[2] | words[3]).astype(bool)
    if dead.any():
        words[0] = np.where(dead, _U64(_SM_GAMMA), words[0])
    return RngBlock(*words)


def _rotl_block(x: np.ndarray, k: int) -> np.ndarray:
    return (x << _U64(k)) | (x >> _U64(64 - k))


def block_next_u64(block: RngBlock) -> tuple[np.ndarray, RngBlock]:
    """xoshiro256** step across all lanes."""
    s0, s1 = block.s0.copy(), block.s1.copy()
    s2, s3 = block.s2.copy(), block.s3.copy()
    out = _rotl_block(s1 * _U64(5), 7) * _U64(9)
    t = s1 << _U64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl_block(s3, 45)
    return out, RngBlock(s0, s1, s2, s3)


def block_normals(block: RngBlock, count: int) -> tuple[np.ndarray, RngBlock]:
    """Draw `count` normals per lane; returns shape (lanes, count) float64."""
    pairs = (count + 1) // 2
    raw = np.empty((block.lanes, 2 * pairs), dtype=_U64)
    for i in range(2 * pairs):
        raw[:, i], block = block_next_u64(block)
    u = ((raw >> _U64(11)).astype(np.float64) + 1.0) * _U53
    u1, u2 = u[:, 0::2], u[:, 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = (2.0 * math.pi) * u2
    out = np.empty((block.lanes, 2 * pairs), dtype=np.float64)
    out[:, 0::2] = r * np.cos(theta)
    out[:, 1::2] = r * np.sin(theta)
    return out[:, :count], block
