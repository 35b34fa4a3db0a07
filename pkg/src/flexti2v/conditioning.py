"""Conditioning machinery: frame replacement, bounded-image lookup, the
dynamic swap schedule, exact-count random masks, and the patch-swap update.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .rng import Purpose, RngState, StreamKey, derive_stream, next_u64
from .tensors import ConditionSet, LatentFrame, LatentVideo

DIRECTION_PER_ALG1 = "per-alg1"
DIRECTION_INVERTED = "inverted"


@dataclass(frozen=True)
class SwapMask:
    """Channel-shared HxW binary mask with an exact count of ones."""

    bits: np.ndarray
    ones: int

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise DimensionError(f"mask must be 2-d, got shape {bits.shape}")
        bits = (bits != 0).astype(np.uint8)
        object.__setattr__(self, "bits", bits)
        if int(bits.sum()) != self.ones:
            raise DimensionError(
                f"mask holds {int(bits.sum())} ones but claims {self.ones}"
            )


@dataclass(frozen=True)
class SwapSchedule:
    """Dynamic-control parameters: initial fraction/steps and decay strides.

    `num_steps` (the total DDIM step count) is only consulted by the
    inverted direction, which activates swapping at high step indices
    instead of low ones.
    """

    P0: float = 0.3
    t0: float = 10.0
    delta1: float = 5e-3
    delta2: float = 0.3
    direction: str = DIRECTION_PER_ALG1
    num_steps: int = 20

    def __post_init__(self):
        if not 0.0 <= self.P0 <= 1.0:
            raise ConfigError("P0 must lie in [0, 1]")
        if self.t0 < 0.0:
            raise ConfigError("t0 must be >= 0")
        if self.delta1 < 0.0 or self.delta2 < 0.0:
            raise ConfigError("decay strides must be >= 0")
        if self.direction not in (DIRECTION_PER_ALG1, DIRECTION_INVERTED):
            raise ConfigError(f"unknown direction {self.direction!r}")
        if self.num_steps < 1:
            raise ConfigError("num_steps must be >= 1")


def frame_replace(
    z_t: LatentVideo, x_t: Sequence[LatentFrame], positions: Sequence[int]
) -> LatentVideo:
    """Overwrite the frames at the condition positions; pass the rest through."""
    m_total = z_t.num_frames
    out = z_t.data.copy()
    for lat, p in zip(x_t, positions):
        if not 0 <= p < m_total:
            raise DimensionError(f"position {p} out of range for {m_total} frames")
        if lat.dims != z_t.frame_dims:
            raise DimensionError(
                f"condition dims {lat.dims} != frame dims {z_t.frame_dims}"
            )
        out[p] = lat.data
    return LatentVideo(out)


def bound_index(m: int, positions: Sequence[int]) -> tuple[int, ...]:
    """Indices of the condition image(s) bounding frame m.

    Frames strictly outside the condition range get the single nearest
    image; a frame sitting on a condition position gets only its own image;
    anything in between gets the straddling pair.
    """
    p = list(positions)
    if not p:
        raise ConfigError("positions must be non-empty")
    if m <= p[0]:
        return (0,)
    if m >= p[-1]:
        return (len(p) - 1,)
    i = bisect.bisect_left(p, m)
    if p[i] == m:
        return (i,)
    return (i - 1, i)


def t_tilde(m: int, n: int, sched: SwapSchedule, positions: Sequence[int]) -> float:
    """Per-frame step budget: t0 - delta2 * |m - p_n| (real-valued)."""
    return sched.t0 - sched.delta2 * abs(m - positions[n])


def swap_fraction(
    m: int, n: int, t: int, sched: SwapSchedule, positions: Sequence[int]
) -> float:
    """Swapped-patch fraction P(m, n, t); zero outside the active window."""
    tt = t_tilde(m, n, sched, positions)
    if sched.direction == DIRECTION_PER_ALG1:
        active = t <= tt
    else:
        active = t > sched.num_steps - tt
    if not active:
        return 0.0
    return max(0.0, sched.P0 - sched.delta1 * abs(m - positions[n]))


def _round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def gen_mask(P: float, H: int, W: int, state: RngState) -> tuple[SwapMask, RngState]:
    """Uniform random mask with exactly round(P*H*W) ones.

    Selection is a Fisher-Yates partial shuffle: draw j = i + u64 mod
    (H*W - i) and swap, keeping the first `ones` slots.
    """
    if not 0.0 <= P <= 1.0:
        raise ConfigError(f"fraction {P} outside [0, 1]")
    total = H * W
    ones = _round_half_away(P * total)
    idx = list(range(total))
    for i in range(ones):
        r, state = next_u64(state)
        j = i + r % (total - i)
        idx[i], idx[j] = idx[j], idx[i]
    bits = np.zeros(total, dtype=np.uint8)
    bits[idx[:ones]] = 1
    return SwapMask(bits.reshape(H, W), ones), state


def patch_swap(frame: LatentFrame, image: LatentFrame, mask: SwapMask) -> LatentFrame:
    """Copy the masked spatial locations of `image` into `frame` (all channels)."""
    if frame.dims != image.dims:
        raise DimensionError(f"frame dims {frame.dims} != image dims {image.dims}")
    if mask.bits.shape != frame.dims[1:]:
        raise DimensionError(
            f"mask shape {mask.bits.shape} != spatial dims {frame.dims[1:]}"
        )
    keep = mask.bits[None, :, :] != 0
    return LatentFrame(np.where(keep, image.data, frame.data))


def apply_conditioning(
    z_hat: LatentVideo,
    conditions: ConditionSet,
    t: int,
    sched: SwapSchedule,
    seed: int,
) -> LatentVideo:
    """Random patch swapping across the whole video at DDIM step t.

    Each frame swaps with its bound condition images in ascending condition
    order (later images overwrite earlier ones where masks overlap).  Frames
    sitting at a condition position are skipped: their only bound image is
    the one just written by frame replacement, so the swap is the identity.
    Masks come from the (seed, mask, t, m, n) substream.
    """
    positions = conditions.positions
    pos_set = set(positions)
    _, h, w = z_hat.frame_dims
    frames = []
    for m in range(z_hat.num_frames):
        frame = z_hat.frame(m)
        if m not in pos_set:
            for n in bound_index(m, positions):
                frac = swap_fraction(m, n, t, sched, positions)
                if frac <= 0.0:
                    continue
                state = derive_stream(
                    StreamKey(seed, Purpose.MASK, t=t, m=m, n=n)
                )
                mask, _ = gen_mask(frac, h, w, state)
                frame = patch_swap(frame, conditions.latents[n], mask)
        frames.append(frame)
    return LatentVideo.from_frames(frames)
