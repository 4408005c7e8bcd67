"""Training-time augmentation applied jointly to an image and its part mask.

Geometric ops (pad-and-crop, flip) transform image and mask with the same
draws so the mask stays pixel-aligned. Appearance ops (channel erasing,
adaptive grayscale) touch the image only: a hidden patch with an intact mask
is exactly the situation the shape pathway is meant to survive.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class AugmentConfig:
    crop_pad: int = 10          # zero-pad border then crop back to original size
    flip_p: float = 0.5
    erase_p: float = 0.5        # channel random erasing
    erase_area: tuple[float, float] = (0.02, 0.4)
    erase_ratio: tuple[float, float] = (0.3, 3.33)
    gray_p: float = 0.5         # adaptive grayscale
    mean: float = 0.5
    std: float = 0.5


def pad_random_crop(image: np.ndarray, mask: np.ndarray, rng: np.random.Generator,
                    pad: int) -> tuple[np.ndarray, np.ndarray]:
    if pad <= 0:
        return image, mask
    h, w = mask.shape
    top = int(rng.integers(0, 2 * pad + 1))
    left = int(rng.integers(0, 2 * pad + 1))
    img_p = np.pad(image, ((pad, pad), (pad, pad), (0, 0)))
    mask_p = np.pad(mask, pad)
    return (img_p[top:top + h, left:left + w],
            mask_p[top:top + h, left:left + w])


def random_flip(image: np.ndarray, mask: np.ndarray, rng: np.random.Generator,
                p: float) -> tuple[np.ndarray, np.ndarray]:
    if rng.random() < p:
        return image[:, ::-1].copy(), mask[:, ::-1].copy()
    return image, mask


def channel_random_erase(image: np.ndarray, rng: np.random.Generator, p: float,
                         area: tuple[float, float],
                         ratio: tuple[float, float]) -> np.ndarray:
    """Blank a rectangle on one random channel (fill: that channel's mean)."""
    if rng.random() >= p:
        return image
    h, w = image.shape[:2]
    for _ in range(50):
        target = rng.uniform(*area) * h * w
        aspect = np.exp(rng.uniform(np.log(ratio[0]), np.log(ratio[1])))
        eh = int(round(np.sqrt(target * aspect)))
        ew = int(round(np.sqrt(target / aspect)))
        if 0 < eh < h and 0 < ew < w:
            top = int(rng.integers(0, h - eh + 1))
            left = int(rng.integers(0, w - ew + 1))
            chan = int(rng.integers(0, image.shape[2]))
            image = image.copy()
            image[top:top + eh, left:left + ew, chan] = image[..., chan].mean()
            return image
    return image


def adaptive_grayscale(image: np.ndarray, rng: np.random.Generator,
                       p: float) -> np.ndarray:
    """Replace all channels by luminance with probability p."""
    if rng.random() >= p:
        return image
    luma = image @ LUMA
    return np.repeat(luma[:, :, None], 3, axis=2)


def normalize(image: np.ndarray, mean: float, std: float) -> np.ndarray:
    return ((image - mean) / std).astype(np.float32)


def augment_sample(image: np.ndarray, mask: np.ndarray, rng: np.random.Generator,
                   cfg: AugmentConfig) -> tuple[np.ndarray, np.ndarray]:
    """Crop, flip, channel-erase, grayscale; returns normalized image + mask."""
    image, mask = pad_random_crop(image, mask, rng, cfg.crop_pad)
    image, mask = random_flip(image, mask, rng, cfg.flip_p)
    image = channel_random_erase(image, rng, cfg.erase_p, cfg.erase_area,
                                 cfg.erase_ratio)
    image = adaptive_grayscale(image, rng, cfg.gray_p)
    return normalize(image, cfg.mean, cfg.std), mask
