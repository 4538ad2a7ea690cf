"""Diffusion noise schedules and the one-step forward (noising) process.

Time steps are 1-based: step t in [1, T] reads the arrays at index t-1,
and t = 0 denotes the clean data point (alpha_bar(0) == 1).
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigurationError, DomainError

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 2e-2


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step signal retention alpha_t and its cumulative product alpha_bar_t."""

    T: int
    alphas: np.ndarray      # shape (T,), values in (0, 1)
    alpha_bars: np.ndarray  # shape (T,), strictly decreasing, values in (0, 1]

    def alpha_bar(self, t: int) -> float:
        """Cumulative product at step t; t = 0 returns 1.0 (clean data)."""
        if not 0 <= t <= self.T:
            raise DomainError(f"time step {t} outside [0, {self.T}]")
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])

    def validate(self) -> None:
        if self.alphas.shape != (self.T,) or self.alpha_bars.shape != (self.T,):
            raise ConfigurationError("schedule arrays must have length T")
        if not (np.all(self.alphas > 0.0) and np.all(self.alphas < 1.0)):
            raise ConfigurationError("alphas must lie in (0, 1)")
        if not (np.all(self.alpha_bars > 0.0) and np.all(self.alpha_bars <= 1.0)):
            raise ConfigurationError("alpha_bars must lie in (0, 1]")
        if not np.all(np.diff(self.alpha_bars) < 0.0):
            raise ConfigurationError("alpha_bars must be strictly decreasing")
        rel = np.abs(np.cumprod(self.alphas) - self.alpha_bars) / self.alpha_bars
        if rel.max() > 1e-6:
            raise ConfigurationError("alpha_bars do not match cumprod(alphas)")


def build_schedule(T: int, kind: str = "linear-beta",
                   beta_start: float = DEFAULT_BETA_START,
                   beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Construct a noise schedule of the given family.

    The default linear-beta family ramps beta linearly from `beta_start` to
    `beta_end`, which drives alpha_bar_T below 0.05 for T = 1000 so terminal
    latents are near-Gaussian.
    """
    if T < 1:
        raise ConfigurationError(f"diffusion horizon T must be >= 1, got {T}")
    if kind == "linear-beta":
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    elif kind == "cosine":
        # Nichol & Dhariwal style: alpha_bar(t) = cos^2((t/T + s)/(1 + s) * pi/2)
        s = 0.008
        grid = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((grid + s) / (1 + s) * np.pi / 2.0) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], 1e-8, 0.999)
    else:
        raise ConfigurationError(f"unsupported schedule kind: {kind!r}")
    alphas = 1.0 - betas
    schedule = NoiseSchedule(T=T, alphas=alphas, alpha_bars=np.cumprod(alphas))
    schedule.validate()
    return schedule


def schedule_from_arrays(alphas: np.ndarray, alpha_bars: np.ndarray) -> NoiseSchedule:
    """Rebuild a schedule from persisted arrays, re-checking invariants."""
    alphas = np.asarray(alphas, dtype=np.float64)
    schedule = NoiseSchedule(T=len(alphas), alphas=alphas,
                             alpha_bars=np.asarray(alpha_bars, dtype=np.float64))
    schedule.validate()
    return schedule


@dataclass(frozen=True)
class ForwardSample:
    """One draw of the reparameterized forward process at step t."""

    t: int
    noise: torch.Tensor
    z_t: torch.Tensor


def forward_diffuse(z0: torch.Tensor, t: int, noise: torch.Tensor,
                    schedule: NoiseSchedule) -> ForwardSample:
    """Noise a latent to step t: z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) noise."""
    if not 1 <= t <= schedule.T:
        raise DomainError(f"time step {t} outside [1, {schedule.T}]")
    if noise.shape != z0.shape:
        raise DomainError(f"noise shape {tuple(noise.shape)} != latent shape {tuple(z0.shape)}")
    z_t = diffuse_to(z0, t, noise, schedule)
    return ForwardSample(t=t, noise=noise, z_t=z_t)


def diffuse_to(z0: torch.Tensor, t: int, noise: torch.Tensor,
               schedule: NoiseSchedule) -> torch.Tensor:
    """Closed-form noising that also accepts t = 0 (returns z0 unchanged)."""
    abar = schedule.alpha_bar(t)
    if t == 0:
        return z0
    signal = float(np.sqrt(abar))
    sigma = float(np.sqrt(1.0 - abar))
    return signal * z0 + sigma * noise
