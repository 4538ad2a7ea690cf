"""Deterministic DDIM-style sampling and the two inference pipelines.

Both pipelines are pure given (inputs, seed): all noise is drawn from a
local generator, and the reverse updates are deterministic, so repeated
runs are bit-identical.
"""

from typing import Optional

import numpy as np
import torch

from .errors import DomainError, StateError
from .models import Condition, ToyLDM, null_condition
from .schedule import diffuse_to


def time_grid(t_start: int, steps: int) -> list[int]:
    """Evenly spaced integer time steps from t_start down to 0 (inclusive).

    Consecutive duplicates (possible when steps > t_start) are dropped.
    """
    if steps < 1:
        raise DomainError(f"steps must be >= 1, got {steps}")
    raw = np.linspace(t_start, 0, steps + 1).round().astype(int)
    grid = [int(raw[0])]
    for t in raw[1:]:
        if int(t) != grid[-1]:
            grid.append(int(t))
    return grid


def predict_eps(model: ToyLDM, z_t: torch.Tensor, t: int, cond: Condition,
                guidance: float) -> torch.Tensor:
    """Classifier-free-guided noise prediction: null + g * (cond - null).

    g == 1 and g == 0 short-circuit to the single relevant branch, which
    keeps those cases bit-exact (and halves the cost).
    """
    if guidance == 1.0 or cond.kind == "null":
        return model.predict_noise(z_t, t, cond)
    eps_null = model.predict_noise(z_t, t, null_condition())
    if guidance == 0.0:
        return eps_null
    eps_cond = model.predict_noise(z_t, t, cond)
    return eps_null + guidance * (eps_cond - eps_null)


def denoise_step(z_t: torch.Tensor, t: int, cond: Condition, guidance: float,
                 model: ToyLDM, t_prev: Optional[int] = None) -> torch.Tensor:
    """One deterministic DDIM update from step t to t_prev (default t - 1)."""
    if not 1 <= t <= model.T:
        raise DomainError(f"time step {t} outside [1, {model.T}]")
    if t_prev is None:
        t_prev = t - 1
    if not 0 <= t_prev < t:
        raise DomainError(f"t_prev {t_prev} must lie in [0, {t})")
    eps = predict_eps(model, z_t, t, cond, guidance)
    abar_t = model.schedule.alpha_bar(t)
    abar_p = model.schedule.alpha_bar(t_prev)
    z0_hat = (z_t - float(np.sqrt(1.0 - abar_t)) * eps) / float(np.sqrt(abar_t))
    return float(np.sqrt(abar_p)) * z0_hat + float(np.sqrt(1.0 - abar_p)) * eps


def _require_trained(model: ToyLDM) -> None:
    if not getattr(model, "trained", False):
        raise StateError("model has not been trained; train or load a checkpoint first")


def run_variation(image: torch.Tensor, cond: Condition, strength: float,
                  steps: int, guidance: float, model: ToyLDM,
                  seed: int = 0) -> torch.Tensor:
    """Image variation: encode, diffuse to round(strength * T), denoise, decode.

    Output pixels are clipped to [0, 1]. strength that rounds to t = 0 skips
    diffusion entirely and returns the codec round trip.
    """
    _require_trained(model)
    if not 0.0 < strength <= 1.0:
        raise DomainError(f"strength must lie in (0, 1], got {strength}")
    single = image.dim() == 3
    x = image[None] if single else image
    with torch.no_grad():
        z0 = model.encode(x)
        t_start = int(round(strength * model.T))
        if t_start == 0:
            out = model.decode(z0).clamp(0, 1)
            return out[0] if single else out
        gen = torch.Generator().manual_seed(seed)
        noise = torch.randn(z0.shape, generator=gen, dtype=z0.dtype)
        z = diffuse_to(z0, t_start, noise, model.schedule)
        grid = time_grid(t_start, steps)
        for t_hi, t_lo in zip(grid[:-1], grid[1:]):
            z = denoise_step(z, t_hi, cond, guidance, model, t_prev=t_lo)
        out = model.decode(z).clamp(0, 1)
    return out[0] if single else out


def _latent_mask(mask: torch.Tensor, latent_hw: tuple[int, int]) -> torch.Tensor:
    """Downsample a pixel mask to latent resolution; a latent cell counts as
    'generate' if any pixel it covers is masked."""
    m = mask.float()
    if m.dim() == 2:
        m = m[None, None]
    elif m.dim() == 3:
        m = m[None]
    down = torch.nn.functional.adaptive_max_pool2d(m, latent_hw)
    return down


def run_inpainting(image: torch.Tensor, cond: Condition, steps: int,
                   guidance: float, model: ToyLDM, seed: int = 0) -> torch.Tensor:
    """Masked generation: denoise from pure noise, re-blending the unmasked
    latent region from the forward-diffused original at every step, then
    composite unmasked pixels from the codec reconstruction."""
    _require_trained(model)
    if cond.mask is None:
        raise DomainError("inpainting requires a condition with a mask")
    single = image.dim() == 3
    x = image[None] if single else image
    mask = cond.mask.float()
    if mask.dim() == 2:
        mask_pix = mask[None, None].expand(x.shape[0], 1, -1, -1)
    else:
        mask_pix = mask[None].expand(x.shape[0], -1, -1, -1)
    with torch.no_grad():
        z0 = model.encode(x)
        m_lat = _latent_mask(cond.mask, z0.shape[-2:]).expand(z0.shape[0], 1, -1, -1)
        gen = torch.Generator().manual_seed(seed)
        z = torch.randn(z0.shape, generator=gen, dtype=z0.dtype)
        grid = time_grid(model.T, steps)
        blend_noise = torch.randn(z0.shape, generator=gen, dtype=z0.dtype)
        z = m_lat * z + (1.0 - m_lat) * diffuse_to(z0, grid[0], blend_noise, model.schedule)
        for t_hi, t_lo in zip(grid[:-1], grid[1:]):
            z = denoise_step(z, t_hi, cond, guidance, model, t_prev=t_lo)
            blend_noise = torch.randn(z0.shape, generator=gen, dtype=z0.dtype)
            z = m_lat * z + (1.0 - m_lat) * diffuse_to(z0, t_lo, blend_noise, model.schedule)
        decoded = model.decode(z)
        recon = model.decode(z0)
        out = (mask_pix * decoded + (1.0 - mask_pix) * recon).clamp(0, 1)
    return out[0] if single else out


def generate_samples(model: ToyLDM, cond: Condition, count: int, steps: int = 100,
                     guidance: float = 1.0, seed: int = 0) -> torch.Tensor:
    """Sample `count` images from pure noise under the given condition."""
    from .data import IMAGE_SIZE
    from .models import LATENT_SHAPE

    _require_trained(model)
    if count == 0:
        return torch.empty((0, 3, IMAGE_SIZE, IMAGE_SIZE))
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        z = torch.randn((count,) + LATENT_SHAPE, generator=gen)
        grid = time_grid(model.T, steps)
        for t_hi, t_lo in zip(grid[:-1], grid[1:]):
            z = denoise_step(z, t_hi, cond, guidance, model, t_prev=t_lo)
        out = model.decode(z).clamp(0, 1)
    return out
