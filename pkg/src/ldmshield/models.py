"""The attackable desk-scale latent diffusion model.

Pixel space is (3, 32, 32) in [0, 1]; latent space is (4, 8, 8). The codec is
a small strided-conv autoencoder, frozen before diffusion training. The
denoiser is a time- and condition-conditioned residual conv net kept under
one million parameters.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigurationError, DomainError
from .schedule import NoiseSchedule, build_schedule, schedule_from_arrays

CHECKPOINT_FORMAT_VERSION = 1

LATENT_SHAPE = (4, 8, 8)
COND_DIM = 32
NULL_CONDITION_ID = 0  # row 0 of the condition table


@dataclass
class Condition:
    """What the generation is conditioned on.

    kind 'class' uses the condition table row for `class_id`; kind 'pseudo'
    supplies an explicit embedding vector (textual-inversion analogue); kind
    'null' is the unconditional token. `mask` is only consumed by inpainting
    (1 = region to generate, 0 = region to keep).
    """

    kind: str = "null"
    class_id: Optional[int] = None
    embedding: Optional[torch.Tensor] = None
    mask: Optional[torch.Tensor] = None

    def __post_init__(self):
        if self.kind not in ("class", "pseudo", "null"):
            raise ConfigurationError(f"unknown condition kind {self.kind!r}")
        if self.kind == "class" and self.class_id is None:
            raise ConfigurationError("class condition requires class_id")
        if self.kind == "pseudo" and self.embedding is None:
            raise ConfigurationError("pseudo condition requires an embedding vector")
        if self.mask is not None:
            vals = torch.unique(self.mask)
            if not bool(((vals == 0) | (vals == 1)).all()):
                raise DomainError("mask values must be 0 or 1")


def null_condition() -> Condition:
    return Condition(kind="null")


def class_condition(class_id: int, mask: Optional[torch.Tensor] = None) -> Condition:
    return Condition(kind="class", class_id=class_id, mask=mask)


class LatentCodec(nn.Module):
    """Strided-conv encoder/decoder pair between pixels and latents."""

    def __init__(self, latent_channels: int = LATENT_SHAPE[0], hidden: int = 48):
        super().__init__()
        self.encoder = nn.Sequential(
            nn.Conv2d(3, hidden, 4, stride=2, padding=1),      # 32 -> 16
            nn.SiLU(),
            nn.Conv2d(hidden, hidden * 2, 4, stride=2, padding=1),  # 16 -> 8
            nn.SiLU(),
            nn.Conv2d(hidden * 2, latent_channels, 3, padding=1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(latent_channels, hidden * 2, 3, padding=1),
            nn.SiLU(),
            nn.ConvTranspose2d(hidden * 2, hidden, 4, stride=2, padding=1),  # 8 -> 16
            nn.SiLU(),
            nn.ConvTranspose2d(hidden, hidden, 4, stride=2, padding=1),      # 16 -> 32
            nn.SiLU(),
            nn.Conv2d(hidden, 3, 3, padding=1),
        )
        # Latents are divided by this factor so diffusion sees ~unit scale.
        self.register_buffer("latent_scale", torch.ones(()))

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x) / self.latent_scale

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return self.decoder(z * self.latent_scale)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))


class SinusoidalEmbedding(nn.Module):
    def __init__(self, dim: int, max_period: float = 10000.0):
        super().__init__()
        self.dim = dim
        self.max_period = max_period

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(-math.log(self.max_period)
                          * torch.arange(half, dtype=torch.get_default_dtype(),
                                         device=t.device) / half)
        args = t.to(freqs.dtype)[:, None] * freqs[None, :]
        return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class FilmResBlock(nn.Module):
    """Residual conv block with per-channel scale/shift from the embedding."""

    def __init__(self, channels: int, emb_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.film = nn.Linear(emb_dim, 2 * channels)
        self.act = nn.SiLU()

    def forward(self, h: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        scale, shift = self.film(emb).chunk(2, dim=-1)
        out = self.act(self.conv1(h))
        out = out * (1.0 + scale[:, :, None, None]) + shift[:, :, None, None]
        out = self.conv2(self.act(out))
        return h + out


class DenoiserNet(nn.Module):
    """Noise predictor on latents, conditioned on time step and condition embedding."""

    def __init__(self, latent_channels: int = LATENT_SHAPE[0], hidden: int = 64,
                 emb_dim: int = 128, cond_dim: int = COND_DIM, num_blocks: int = 4):
        super().__init__()
        self.time_features = SinusoidalEmbedding(emb_dim)
        self.time_mlp = nn.Sequential(
            nn.Linear(emb_dim, emb_dim),
            nn.SiLU(),
            nn.Linear(emb_dim, emb_dim),
        )
        self.cond_proj = nn.Linear(cond_dim, emb_dim)
        self.conv_in = nn.Conv2d(latent_channels, hidden, 3, padding=1)
        self.blocks = nn.ModuleList(FilmResBlock(hidden, emb_dim) for _ in range(num_blocks))
        self.conv_out = nn.Conv2d(hidden, latent_channels, 3, padding=1)
        # Input-dependent gain lets the net represent scalings of z_t directly.
        self.skip_gain = nn.Linear(emb_dim, latent_channels)

    def forward(self, z: torch.Tensor, t: torch.Tensor, cond_emb: torch.Tensor) -> torch.Tensor:
        emb = self.time_mlp(self.time_features(t).to(z.dtype)) + self.cond_proj(cond_emb)
        h = self.conv_in(z)
        for block in self.blocks:
            h = block(h, emb)
        gain = self.skip_gain(emb)[:, :, None, None]
        return self.conv_out(h) + gain * z


class ToyLDM(nn.Module):
    """Codec + schedule + denoiser + condition table; the attack surface."""

    def __init__(self, codec: Optional[nn.Module] = None,
                 denoiser: Optional[nn.Module] = None,
                 schedule: Optional[NoiseSchedule] = None,
                 num_classes: int = 4, cond_dim: int = COND_DIM):
        super().__init__()
        self.codec = codec if codec is not None else LatentCodec()
        self.denoiser = denoiser if denoiser is not None else DenoiserNet(cond_dim=cond_dim)
        self.schedule = schedule if schedule is not None else build_schedule(1000)
        self.num_classes = num_classes
        self.cond_dim = cond_dim
        self.condition_table = nn.Embedding(num_classes + 1, cond_dim)
        nn.init.normal_(self.condition_table.weight, std=0.2)
        self.trained = False

    @property
    def T(self) -> int:
        return self.schedule.T

    def embed_condition(self, cond: Condition, batch: int) -> torch.Tensor:
        if cond.kind == "null":
            idx = torch.full((batch,), NULL_CONDITION_ID, dtype=torch.long)
            return self.condition_table(idx)
        if cond.kind == "class":
            if not 0 <= cond.class_id < self.num_classes:
                raise DomainError(f"class id {cond.class_id} outside [0, {self.num_classes})")
            idx = torch.full((batch,), cond.class_id + 1, dtype=torch.long)
            return self.condition_table(idx)
        emb = cond.embedding
        if emb.shape[-1] != self.cond_dim:
            raise DomainError(f"embedding dim {emb.shape[-1]} != condition table dim {self.cond_dim}")
        if emb.dim() == 1:
            emb = emb[None, :].expand(batch, -1)
        return emb

    def predict_noise(self, z_t: torch.Tensor, t, cond: Condition) -> torch.Tensor:
        """Evaluate the denoiser at integer step(s) t in [1, T]."""
        batch = z_t.shape[0]
        if isinstance(t, int):
            if not 1 <= t <= self.T:
                raise DomainError(f"time step {t} outside [1, {self.T}]")
            t = torch.full((batch,), t, dtype=torch.long)
        cond_emb = self.embed_condition(cond, batch).to(z_t.dtype)
        return self.denoiser(z_t, t, cond_emb)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.codec.encode(x)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return self.codec.decode(z)


def save_checkpoint(path: str, model: ToyLDM, config: Optional[dict] = None) -> None:
    torch.save({
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": dict(config or {}),
        "num_classes": model.num_classes,
        "cond_dim": model.cond_dim,
        "trained": model.trained,
        "schedule_alphas": model.schedule.alphas,
        "schedule_alpha_bars": model.schedule.alpha_bars,
        "state_dict": model.state_dict(),
    }, path)


def load_checkpoint(path: str) -> ToyLDM:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    version = blob.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint format version: {version}")
    schedule = schedule_from_arrays(blob["schedule_alphas"], blob["schedule_alpha_bars"])
    model = ToyLDM(schedule=schedule, num_classes=blob["num_classes"],
                   cond_dim=blob["cond_dim"])
    model.load_state_dict(blob["state_dict"])
    model.trained = bool(blob.get("trained", False))
    model.eval()
    return model
