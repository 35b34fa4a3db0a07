"""Variance schedule, forward-diffusion inversion, and the DDIM update.

Schedule scalars are kept in float64; tensor math stays in float32 (Python
float coefficients do not promote float32 arrays under NEP 50).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .tensors import LatentFrame, LatentVideo

DEFAULT_BETA_START = 8.5e-4
DEFAULT_BETA_END = 1.2e-2
DEFAULT_T_TRAIN = 1000


@dataclass(frozen=True)
class NoiseSchedule:
    """beta/alpha/alpha-bar sequences over the training timesteps.

    alpha_bars has length T_train + 1 and is indexed by the timestep
    directly, with alpha_bar(0) == 1 so stepping to t=0 yields a clean
    latent.
    """

    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ConfigError("betas must be a non-empty 1-d sequence")
        if not ((betas > 0.0) & (betas < 1.0)).all():
            raise ConfigError("every beta must lie in (0, 1)")
        object.__setattr__(self, "betas", betas)
        alphas = 1.0 - betas
        bars = np.concatenate([[1.0], np.cumprod(alphas)])
        object.__setattr__(self, "_alphas", alphas)
        object.__setattr__(self, "_alpha_bars", bars)

    @property
    def T_train(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return self._alphas

    @property
    def alpha_bars(self) -> np.ndarray:
        return self._alpha_bars

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T_train:
            raise ConfigError(f"timestep {t} outside [0, {self.T_train}]")
        return float(self._alpha_bars[t])


@dataclass(frozen=True)
class TimestepMap:
    """Strictly increasing training timesteps tau_1 < ... < tau_K used by DDIM."""

    taus: tuple[int, ...]

    def __post_init__(self):
        taus = tuple(int(t) for t in self.taus)
        if not taus:
            raise ConfigError("timestep map must not be empty")
        if taus[0] < 1:
            raise ConfigError("tau_1 must be >= 1")
        for a, b in zip(taus, taus[1:]):
            if b <= a:
                raise ConfigError("taus must be strictly increasing")
        object.__setattr__(self, "taus", taus)

    @property
    def K(self) -> int:
        return len(self.taus)

    def tau(self, k: int) -> int:
        """Training timestep for DDIM step index k in 1..K; tau(0) == 0."""
        if not 0 <= k <= self.K:
            raise ConfigError(f"step index {k} outside [0, {self.K}]")
        return 0 if k == 0 else self.taus[k - 1]


def make_schedule(
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
    T_train: int = DEFAULT_T_TRAIN,
) -> NoiseSchedule:
    """Scaled-linear schedule: sqrt(beta) interpolates linearly over t."""
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError("need 0 < beta_start <= beta_end < 1")
    if T_train < 1:
        raise ConfigError("T_train must be >= 1")
    if T_train == 1:
        return NoiseSchedule(np.array([beta_start], dtype=np.float64))
    roots = np.linspace(math.sqrt(beta_start), math.sqrt(beta_end), T_train)
    return NoiseSchedule(roots * roots)


def select_timesteps(T_train: int, K: int) -> TimestepMap:
    """Uniform stride: tau_k = k * (T_train div K), ending exactly at T_train
    when K divides T_train."""
    if K < 1:
        raise ConfigError("K must be >= 1")
    if K > T_train:
        raise ConfigError(f"K={K} exceeds T_train={T_train}")
    stride = T_train // K
    return TimestepMap(tuple(k * stride for k in range(1, K + 1)))


def invert(schedule: NoiseSchedule, x0: LatentFrame, t: int, eps: LatentFrame) -> LatentFrame:
    """Forward diffusion in closed form: sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps."""
    if x0.dims != eps.dims:
        raise DimensionError(f"x0 dims {x0.dims} != eps dims {eps.dims}")
    abar = schedule.alpha_bar(t)
    return LatentFrame(x0.data * math.sqrt(abar) + eps.data * math.sqrt(1.0 - abar))


def ddim_step(
    schedule: NoiseSchedule,
    z_t: LatentVideo,
    eps_hat: LatentVideo,
    t: int,
    t_prev: int,
    sigma: float = 0.0,
    eps_prime: LatentVideo | None = None,
) -> LatentVideo:
    """One DDIM update from timestep t to t_prev (deterministic when sigma=0)."""
    if not t > t_prev >= 0:
        raise ConfigError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    if sigma < 0.0:
        raise ConfigError("sigma must be >= 0")
    if z_t.data.shape != eps_hat.data.shape:
        raise DimensionError(
            f"latent shape {z_t.data.shape} != noise estimate shape {eps_hat.data.shape}"
        )
    abar_t = schedule.alpha_bar(t)
    abar_prev = schedule.alpha_bar(t_prev)
    resid = 1.0 - abar_prev - sigma * sigma
    if resid < 0.0:
        raise ConfigError(
            f"sigma^2={sigma * sigma:.6g} exceeds 1 - alpha_bar(t_prev)={1.0 - abar_prev:.6g}"
        )
    scale = math.sqrt(abar_prev) / math.sqrt(abar_t)
    out = (z_t.data - eps_hat.data * math.sqrt(1.0 - abar_t)) * scale
    out = out + eps_hat.data * math.sqrt(resid)
    if sigma > 0.0:
        if eps_prime is None:
            raise ConfigError("eps_prime required when sigma > 0")
        if eps_prime.data.shape != z_t.data.shape:
            raise DimensionError("eps_prime shape differs from latent shape")
        out = out + eps_prime.data * sigma
    elif eps_prime is not None:
        raise ConfigError("eps_prime given but sigma == 0")
    return LatentVideo(out)
