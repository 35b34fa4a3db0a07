"""End-to-end denoising orchestration.

One run: invert the first condition image at the top noise level and tile
it as the initial video latent; then, stepping the DDIM index k from K down
to 1, re-invert every condition image at tau_k, overwrite the frames at the
condition positions, randomly swap patches into the remaining frames, query
the noise estimator (twice under classifier-free guidance), and take one
deterministic DDIM step.  Every stochastic draw comes from a keyed
substream, so runs are bit-reproducible.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Protocol, runtime_checkable

import numpy as np

from .conditioning import (
    DIRECTION_INVERTED,
    DIRECTION_PER_ALG1,
    SwapSchedule,
    apply_conditioning,
    frame_replace,
)
from .errors import ConfigError, DimensionError, EngineError
from .rng import Purpose, StreamKey, derive_stream, normals
from .schedule import NoiseSchedule, TimestepMap, ddim_step, invert
from .tensors import ConditionSet, LatentFrame, LatentVideo


@dataclass
class EngineConfig:
    """All run hyperparameters and ablation toggles."""

    M: int = 16
    K: int = 20
    P0: float = 0.3
    t0: float = 10.0
    delta1: float = 5e-3
    delta2: float = 0.3
    guidance_scale: float = 9.0
    sigma: float = 0.0
    seed: int = 0
    enable_frame_replace: bool = True
    enable_rps: bool = True
    enable_dynamic_control: bool = True
    hard_replace_output: bool = False
    reuse_inversion_noise: bool = False
    direction: str = DIRECTION_PER_ALG1

    def __post_init__(self):
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.guidance_scale < 0.0:
            raise ConfigError("guidance_scale must be >= 0")
        if self.sigma < 0.0:
            raise ConfigError("sigma must be >= 0")
        if not 0 <= self.seed <= (1 << 64) - 1:
            raise ConfigError("seed must fit in 64 bits")
        if self.direction not in (DIRECTION_PER_ALG1, DIRECTION_INVERTED):
            raise ConfigError(f"unknown direction {self.direction!r}")
        # SwapSchedule re-validates P0/t0/deltas; construct eagerly to fail fast
        self.swap_schedule()

    def swap_schedule(self) -> SwapSchedule:
        """Dynamic control collapses to fixed P0/t0 when the toggle is off."""
        d1 = self.delta1 if self.enable_dynamic_control else 0.0
        d2 = self.delta2 if self.enable_dynamic_control else 0.0
        return SwapSchedule(
            P0=self.P0,
            t0=self.t0,
            delta1=d1,
            delta2=d2,
            direction=self.direction,
            num_steps=self.K,
        )


@dataclass(frozen=True)
class PromptSpec:
    """Opaque text forwarded to estimators; empty negative = unconditional."""

    text: str
    negative: str = ""


@runtime_checkable
class NoiseEstimator(Protocol):
    uses_guidance: bool

    def estimate(
        self, z: LatentVideo, t_train: int, prompt: PromptSpec, conditional: bool
    ) -> LatentVideo: ...


class OracleEstimator:
    """Analytic estimator returning the exact noise toward a known target.

    Inverts the forward closed form: eps = (z_t - sqrt(abar)*target) /
    sqrt(1 - abar).  A deterministic sampler driven by it recovers the
    target exactly (up to f32 accumulation), which makes full trajectories
    checkable.  Ignores prompts and bypasses guidance.
    """

    uses_guidance = False

    def __init__(self, target: LatentVideo, schedule: NoiseSchedule):
        self.target = target
        self.schedule = schedule

    def estimate(self, z, t_train, prompt, conditional):
        return oracle_estimate(self.schedule, z, t_train, self.target)


def oracle_estimate(
    schedule: NoiseSchedule, z_t: LatentVideo, t_train: int, target: LatentVideo
) -> LatentVideo:
    abar = schedule.alpha_bar(t_train)
    if abar >= 1.0:
        raise ConfigError(f"alpha_bar({t_train}) = 1; noise is undefined at t=0")
    if z_t.data.shape != target.data.shape:
        raise DimensionError(
            f"latent shape {z_t.data.shape} != target shape {target.data.shape}"
        )
    return LatentVideo(
        (z_t.data - target.data * math.sqrt(abar)) * (1.0 / math.sqrt(1.0 - abar))
    )


class DummyEstimator:
    """Deterministic stand-in for a pretrained noise network.

    eps[m,c,i,j] = tanh(z[m,c,i,j]) * (0.5 + 0.5*conditional)
                   + 0.01 * ((t_train mod 7) - 3)

    Bounded, nonlinear, and exactly specified, so the guidance and
    conditioning paths stay nontrivial without any weights.  The remote
    worker ships the same formula; the two must agree bit for bit.
    """

    uses_guidance = True

    def estimate(self, z, t_train, prompt, conditional):
        return LatentVideo(dummy_denoise(z.data, t_train, conditional))


def dummy_denoise(z: np.ndarray, t_train: int, conditional: bool) -> np.ndarray:
    gain = 0.5 + 0.5 * (1 if conditional else 0)
    bias = 0.01 * ((t_train % 7) - 3)
    return np.tanh(z) * gain + bias


def init_noise(x_T_first: LatentFrame, M: int) -> LatentVideo:
    """Tile the inverted first condition image M times along the frame axis."""
    if M < 1:
        raise ConfigError("M must be >= 1")
    return LatentVideo(np.repeat(x_T_first.data[None, ...], M, axis=0))


def cfg_combine(eps_uncond: LatentVideo, eps_cond: LatentVideo, s: float) -> LatentVideo:
    """Classifier-free guidance: eps_u + s * (eps_c - eps_u).

    The endpoints skip the arithmetic so s=0 and s=1 return the operands
    bit-exactly instead of a rounded reconstruction.
    """
    if eps_uncond.data.shape != eps_cond.data.shape:
        raise DimensionError("guidance operands differ in shape")
    if s == 0.0:
        return eps_uncond
    if s == 1.0:
        return eps_cond
    return LatentVideo(eps_uncond.data + (eps_cond.data - eps_uncond.data) * s)


@dataclass
class StepRecord:
    """Everything observable about one DDIM step, for tests and reporting."""

    k: int
    t_train: int
    t_prev: int
    inverted: tuple[LatentFrame, ...]
    after_replace: LatentVideo
    after_rps: LatentVideo
    eps_hat: LatentVideo
    z_next: LatentVideo
    wall_ms: float = 0.0


StepObserver = Callable[[StepRecord], None]


def _draw_frame_noise(seed: int, purpose: Purpose, t: int, m: int, n: int, dims) -> LatentFrame:
    state = derive_stream(StreamKey(seed, purpose, t=t, m=m, n=n))
    c, h, w = dims
    values, _ = normals(state, c * h * w)
    return LatentFrame(values.astype(np.float32).reshape(c, h, w))


def run_flexti2v(
    cfg: EngineConfig,
    conditions: ConditionSet,
    prompt: PromptSpec,
    estimator: NoiseEstimator,
    schedule: NoiseSchedule,
    tmap: TimestepMap,
    observer: StepObserver | None = None,
) -> LatentVideo:
    """Run the full conditioning + sampling loop; returns the clean latent video."""
    if tmap.K != cfg.K:
        raise ConfigError(f"timestep map has {tmap.K} steps, config says {cfg.K}")
    if tmap.tau(cfg.K) > schedule.T_train:
        raise ConfigError("timestep map exceeds the schedule's training range")
    positions = conditions.positions
    if positions[-1] >= cfg.M:
        raise ConfigError(
            f"position {positions[-1]} out of range for M={cfg.M} frames"
        )
    if estimator.uses_guidance and cfg.guidance_scale > 0.0 and not prompt.text:
        raise ConfigError("prompt text must be non-empty under guidance")

    dims = conditions.frame_dims
    x0 = conditions.latents
    sched = cfg.swap_schedule()

    # Noise initialization: invert the first condition image at the top level
    # and duplicate it across all frames.
    eps_init = _draw_frame_noise(cfg.seed, Purpose.INIT_NOISE, cfg.K, 0, 0, dims)
    z = init_noise(invert(schedule, x0[0], tmap.tau(cfg.K), eps_init), cfg.M)

    reused_eps: list[LatentFrame] | None = None
    for k in range(cfg.K, 0, -1):
        started = time.perf_counter()
        t_train = tmap.tau(k)
        t_prev = tmap.tau(k - 1)

        if cfg.reuse_inversion_noise:
            if reused_eps is None:
                reused_eps = [
                    _draw_frame_noise(cfg.seed, Purpose.INVERSION_NOISE, cfg.K, 0, n, dims)
                    for n in range(len(x0))
                ]
            eps_n = reused_eps
        else:
            eps_n = [
                _draw_frame_noise(cfg.seed, Purpose.INVERSION_NOISE, k, 0, n, dims)
                for n in range(len(x0))
            ]
        x_t = tuple(invert(schedule, x0[n], t_train, eps_n[n]) for n in range(len(x0)))

        if cfg.enable_frame_replace:
            z = frame_replace(z, x_t, positions)
        after_replace = z

        if cfg.enable_rps:
            z = apply_conditioning(
                z, ConditionSet(x_t, positions), k, sched, cfg.seed
            )
        after_rps = z

        try:
            if estimator.uses_guidance:
                eps_u = estimator.estimate(z, t_train, prompt, conditional=False)
                eps_c = estimator.estimate(z, t_train, prompt, conditional=True)
                eps_hat = cfg_combine(eps_u, eps_c, cfg.guidance_scale)
            else:
                eps_hat = estimator.estimate(z, t_train, prompt, conditional=True)
        except Exception as exc:
            raise EngineError(
                f"estimator failed at step k={k} (t_train={t_train}): {exc}"
            ) from exc
        if eps_hat.data.shape != z.data.shape:
            raise EngineError(
                f"estimator returned shape {eps_hat.data.shape} at step k={k},"
                f" expected {z.data.shape}"
            )

        # the terminal step must be deterministic: 1 - alpha_bar(0) leaves no
        # room for stochastic noise
        step_sigma = cfg.sigma if t_prev > 0 else 0.0
        eps_prime = None
        if step_sigma > 0.0:
            eps_prime = LatentVideo(
                np.stack(
                    [
                        _draw_frame_noise(cfg.seed, Purpose.STEP_NOISE, k, m, 0, dims).data
                        for m in range(cfg.M)
                    ]
                )
            )
        z = ddim_step(schedule, z, eps_hat, t_train, t_prev, step_sigma, eps_prime)

        if observer is not None:
            observer(
                StepRecord(
                    k=k,
                    t_train=t_train,
                    t_prev=t_prev,
                    inverted=x_t,
                    after_replace=after_replace,
                    after_rps=after_rps,
                    eps_hat=eps_hat,
                    z_next=z,
                    wall_ms=(time.perf_counter() - started) * 1e3,
                )
            )

    if cfg.hard_replace_output:
        z = frame_replace(z, x0, positions)
    return z
