"""Training loops for the codec and the denoiser, with recorded loss traces."""

from dataclasses import dataclass, field

import torch

from .data import ImageDataset
from .errors import TrainingFailure
from .models import NULL_CONDITION_ID, ToyLDM


@dataclass
class TrainConfig:
    codec_steps: int = 1500
    denoiser_steps: int = 4000
    batch_size: int = 64
    codec_lr: float = 2e-3
    denoiser_lr: float = 1e-3
    p_uncond: float = 0.1       # classifier-free-guidance condition dropout
    seed: int = 0
    codec_tolerance: float = 0.05  # required post-training reconstruction MAE
    divergence_factor: float = 10.0


def moving_average(trace, window: int):
    """Simple trailing moving average; shorter prefixes average what exists."""
    out = []
    acc = 0.0
    for i, v in enumerate(trace):
        acc += v
        if i >= window:
            acc -= trace[i - window]
        out.append(acc / min(i + 1, window))
    return out


def _batches(n: int, batch_size: int, steps: int, gen: torch.Generator):
    for _ in range(steps):
        yield torch.randint(0, n, (min(batch_size, n),), generator=gen)


def train_codec(model: ToyLDM, dataset: ImageDataset, config: TrainConfig) -> list:
    """Autoencoder pretraining; calibrates the latent scale afterwards."""
    if len(dataset) == 0:
        raise TrainingFailure("empty dataset")
    if config.codec_steps == 0:
        return []
    gen = torch.Generator().manual_seed(config.seed)
    opt = torch.optim.Adam(model.codec.parameters(), lr=config.codec_lr)
    trace = []
    model.codec.train()
    for idx in _batches(len(dataset), config.batch_size, config.codec_steps, gen):
        x = dataset.images[idx]
        loss = torch.nn.functional.mse_loss(model.codec(x), x)
        opt.zero_grad()
        loss.backward()
        opt.step()
        trace.append(float(loss.detach()))
    model.codec.eval()
    with torch.no_grad():
        raw = model.codec.encoder(dataset.images[: min(len(dataset), 256)])
        model.codec.latent_scale.fill_(raw.std().clamp_min(1e-6))
    return trace


def train_denoiser(model: ToyLDM, dataset: ImageDataset, config: TrainConfig) -> list:
    """Noise-prediction training of the denoiser and condition table.

    The codec is frozen; latents are precomputed once. Raises
    TrainingFailure if the loss stays above divergence_factor times the
    initial loss for a full epoch's worth of steps.
    """
    if len(dataset) == 0:
        raise TrainingFailure("empty dataset")
    if config.denoiser_steps == 0:
        return []
    gen = torch.Generator().manual_seed(config.seed + 1)
    with torch.no_grad():
        latents = model.encode(dataset.images)
    params = list(model.denoiser.parameters()) + list(model.condition_table.parameters())
    opt = torch.optim.Adam(params, lr=config.denoiser_lr)
    trace = []
    steps_per_epoch = max(1, len(dataset) // config.batch_size)
    bad_streak = 0
    model.denoiser.train()
    for idx in _batches(len(dataset), config.batch_size, config.denoiser_steps, gen):
        z0 = latents[idx]
        b = z0.shape[0]
        t = torch.randint(1, model.T + 1, (b,), generator=gen)
        noise = torch.randn(z0.shape, generator=gen)
        abar = torch.as_tensor(model.schedule.alpha_bars, dtype=z0.dtype)[t - 1]
        z_t = abar.sqrt()[:, None, None, None] * z0 \
            + (1 - abar).sqrt()[:, None, None, None] * noise
        cond_idx = dataset.labels[idx] + 1
        drop = torch.rand(b, generator=gen) < config.p_uncond
        cond_idx = torch.where(drop, torch.full_like(cond_idx, NULL_CONDITION_ID), cond_idx)
        cond_emb = model.condition_table(cond_idx)
        pred = model.denoiser(z_t, t, cond_emb)
        loss = torch.nn.functional.mse_loss(pred, noise)
        opt.zero_grad()
        loss.backward()
        opt.step()
        trace.append(float(loss.detach()))
        if not torch.isfinite(loss):
            raise TrainingFailure("denoiser training produced a non-finite loss",
                                  trace=trace)
        if trace[-1] > config.divergence_factor * trace[0]:
            bad_streak += 1
            if bad_streak >= steps_per_epoch:
                raise TrainingFailure("denoiser training diverged", trace=trace)
        else:
            bad_streak = 0
    model.denoiser.eval()
    model.trained = True
    return trace


def train_ldm(model: ToyLDM, dataset: ImageDataset, config: TrainConfig):
    """Codec pretraining followed by denoiser training; returns both traces."""
    codec_trace = train_codec(model, dataset, config)
    denoiser_trace = train_denoiser(model, dataset, config)
    return codec_trace, denoiser_trace
