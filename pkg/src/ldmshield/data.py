"""Toy image data: a procedurally generated 32x32 shapes set and PNG ingestion.

The bundled dataset draws one of four shape classes (disc, square, cross,
stripes) at a random position/size on a random low-frequency background.
Everything is derived from a seed, so "the bundled dataset" is reproducible
without shipping binary assets.
"""

import os
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from .errors import DataError

IMAGE_SIZE = 32
NUM_CLASSES = 4
CLASS_NAMES = ("disc", "square", "cross", "stripes")


@dataclass
class ImageDataset:
    images: torch.Tensor  # (N, 3, 32, 32) float32 in [0, 1]
    labels: torch.Tensor  # (N,) int64 in [0, NUM_CLASSES)

    def __len__(self) -> int:
        return self.images.shape[0]


def _background(rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE] / IMAGE_SIZE
    base = rng.uniform(0.1, 0.6, size=3)
    tilt = rng.uniform(-0.25, 0.25, size=(3, 2))
    img = base[:, None, None] + tilt[:, 0, None, None] * yy + tilt[:, 1, None, None] * xx
    return img


def _draw_shape(img: np.ndarray, label: int, rng: np.random.Generator) -> None:
    color = rng.uniform(0.4, 1.0, size=3)
    cx, cy = rng.uniform(10, 22, size=2)
    r = rng.uniform(5, 9)
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    if label == 0:      # disc
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    elif label == 1:    # square
        mask = (np.abs(yy - cy) <= r * 0.8) & (np.abs(xx - cx) <= r * 0.8)
    elif label == 2:    # cross
        w = max(1.5, r / 3.0)
        mask = ((np.abs(yy - cy) <= w) & (np.abs(xx - cx) <= r)) | \
               ((np.abs(xx - cx) <= w) & (np.abs(yy - cy) <= r))
    else:               # stripes
        period = rng.integers(4, 8)
        phase = rng.integers(0, period)
        mask = ((xx + phase) % period) < period // 2
    img[:, mask] = color[:, None]


def make_dataset(n: int, seed: int = 0, balanced: bool = True) -> ImageDataset:
    """Generate n shape images. Balanced label cycling unless disabled."""
    rng = np.random.default_rng(seed)
    images = np.empty((n, 3, IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        label = i % NUM_CLASSES if balanced else int(rng.integers(0, NUM_CLASSES))
        img = _background(rng)
        _draw_shape(img, label, rng)
        img += rng.normal(0.0, 0.01, size=img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
        labels[i] = label
    return ImageDataset(images=torch.from_numpy(images), labels=torch.from_numpy(labels))


def periodic_target(size: int = IMAGE_SIZE) -> torch.Tensor:
    """Default target image for encoder/Mist attacks: a high-contrast periodic
    checker/sine pattern. Not the pattern used by any published attack; it is
    a stand-in shipped with the toolkit."""
    yy, xx = np.mgrid[0:size, 0:size]
    checker = ((xx // 4 + yy // 4) % 2).astype(np.float32)
    wave = 0.5 + 0.5 * np.sin(2 * np.pi * (xx + yy) / 8.0)
    img = np.stack([checker, wave.astype(np.float32), 1.0 - checker])
    return torch.from_numpy(np.clip(img, 0.0, 1.0).astype(np.float32))


def save_image(path: str, image: torch.Tensor) -> None:
    """Write a (3, H, W) float tensor in [0, 1] as an 8-bit PNG.

    Pixel values are rounded to the 8-bit grid. Images that already live on
    that grid (anything loaded from PNG) round-trip exactly, so an l-inf
    budget of k/255 is preserved on disk.
    """
    arr = (image.detach().clamp(0, 1).numpy() * 255.0).round().astype(np.uint8)
    Image.fromarray(np.transpose(arr, (1, 2, 0))).save(path, format="PNG")


def snap_to_grid(image: torch.Tensor) -> torch.Tensor:
    """Round pixel values to the 8-bit grid (multiples of 1/255)."""
    return (image.clamp(0, 1) * 255.0).round() / 255.0


def load_image(path: str, size: int = IMAGE_SIZE) -> torch.Tensor:
    """Load an image file, resize the short side to `size`, center crop."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        w, h = im.size
        scale = size / min(w, h)
        im = im.resize((max(size, round(w * scale)), max(size, round(h * scale))),
                       Image.BILINEAR)
        w, h = im.size
        left, top = (w - size) // 2, (h - size) // 2
        im = im.crop((left, top, left + size, top + size))
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return torch.from_numpy(np.transpose(arr, (2, 0, 1)).copy())


def load_directory(path: str, size: int = IMAGE_SIZE) -> torch.Tensor:
    """Load every PNG/JPEG in a directory (sorted by name) as a batch."""
    names = sorted(f for f in os.listdir(path)
                   if f.lower().endswith((".png", ".jpg", ".jpeg")))
    if not names:
        raise DataError(f"no image files found in {path}")
    return torch.stack([load_image(os.path.join(path, n), size) for n in names])
