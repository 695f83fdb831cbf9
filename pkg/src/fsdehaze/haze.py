"""Atmospheric scattering model.

Images are H x W x C float arrays with values in [0, 1]; transmission and
depth maps are H x W. Atmospheric light is a length-C vector (or a scalar
for single-channel images). All functions are pure and clamp their result
to [0, 1].
"""

import numpy as np

# Floor applied to the transmission map during recovery so the division
# stays bounded; below the smallest transmission used for synthesis (0.2).
T_FLOOR = 0.05


def _as_image(img, name):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"{name} must be H x W x C with C in (1, 3), got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name} must have H >= 1 and W >= 1, got shape {img.shape}")
    return img


def _as_light(light, channels):
    a = np.atleast_1d(np.asarray(light, dtype=np.float64))
    if a.ndim != 1 or a.size not in (1, channels):
        raise ValueError(f"atmospheric light must be a scalar or length-{channels} vector, got shape {a.shape}")
    if np.any(a < 0.0) or np.any(a > 1.0):
        raise ValueError(f"atmospheric light components must lie in [0, 1], got {a}")
    return a


def _check_t(t, shape, name="transmission"):
    t = np.asarray(t, dtype=np.float64)
    if t.shape != shape:
        raise ValueError(f"{name} shape {t.shape} does not match image shape {shape}")
    return t


def synthesize_haze(clean, t, light):
    """Apply the scattering model: hazy = clean * t + A * (1 - t).

    `t` is shared across channels, `light` is per channel.
    """
    clean = _as_image(clean, "clean")
    t = _check_t(t, clean.shape[:2])
    a = _as_light(light, clean.shape[2])
    hazy = clean * t[..., None] + a * (1.0 - t[..., None])
    return np.clip(hazy, 0.0, 1.0)


def transmission_from_depth(depth, beta):
    """Transmission under a homogeneous atmosphere: t = exp(-beta * depth)."""
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth < 0):
        raise ValueError("depth must be nonnegative")
    return np.exp(-beta * depth)


def recover_clear(hazy, t, light, t_floor=T_FLOOR):
    """Invert the scattering model: clean = (hazy - A) / max(t, floor) + A."""
    hazy = _as_image(hazy, "hazy")
    t = _check_t(t, hazy.shape[:2])
    a = _as_light(light, hazy.shape[2])
    t = np.maximum(t, t_floor)
    clean = (hazy - a) / t[..., None] + a
    return np.clip(clean, 0.0, 1.0)
