"""Photometric augmentation of observation images."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from ..scene import hsv_to_rgb, rgb_to_hsv


@dataclass(frozen=True)
class AugmentConfig:
    p_hsv: float = 0.5
    p_noise: float = 0.5
    p_blur: float = 0.5
    hue: float = 0.05
    sat: float = 0.2
    val: float = 0.2
    noise_sigma: float = 0.02
    blur_max: float = 1.0

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(p_hsv=0.0, p_noise=0.0, p_blur=0.0)


def hsv_shift(img: np.ndarray, dh: float, ds: float, dv: float) -> np.ndarray:
    hsv = rgb_to_hsv(img)
    hsv[..., 0] = (hsv[..., 0] + dh) % 1.0
    hsv[..., 1] = np.clip(hsv[..., 1] + ds, 0.0, 1.0)
    hsv[..., 2] = np.clip(hsv[..., 2] + dv, 0.0, 1.0)
    return hsv_to_rgb(hsv)


def augment(img: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """HSV shift, additive noise and blur, each applied independently.

    Random draws happen in a fixed order whether or not an effect fires, so a
    seed always consumes the same stream.
    """
    gates = rng.random(3) < (cfg.p_hsv, cfg.p_noise, cfg.p_blur)
    shift = rng.uniform(-1.0, 1.0, 3) * (cfg.hue, cfg.sat, cfg.val)
    sigma_blur = rng.uniform(0.0, cfg.blur_max)
    out = np.asarray(img, dtype=np.float64)
    if gates[0]:
        out = hsv_shift(out, *shift)
    if gates[1]:
        out = out + rng.normal(0.0, cfg.noise_sigma, out.shape)
    if gates[2] and sigma_blur > 0:
        out = gaussian_filter(out, sigma=(sigma_blur, sigma_blur, 0), mode="nearest")
    return np.clip(out, 0.0, 1.0).astype(np.float32)
