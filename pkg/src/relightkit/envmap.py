"""Lat-long (equirectangular) environment map geometry and resampling.

Conventions, used everywhere in this package:

* A map is an H x W array (plus optional trailing channel axis) with
  W = 2H for full panoramas; the helpers accept any H, W.
* Row 0 is latitude +90 degrees; the north pole is the +z axis.
* Columns span longitude [0, 360) degrees; longitude 0 is the +x axis
  and longitude grows toward +y.
* Directions are unit vectors (x, y, z); pixel centers sit at half-pixel
  offsets.

Radiance is linear and non-negative.  Per-pixel solid angles come from
the exact sphere-patch integral, so their sum over any full grid is 4*pi.
"""

from __future__ import annotations

import numpy as np


def solid_angle_map(height: int, width: int) -> np.ndarray:
    """Solid angle of each pixel, shape (height, width).

    Row r covers polar angles [pi*r/H, pi*(r+1)/H] and each pixel covers
    2*pi/W of azimuth, so its exact solid angle is
    (2*pi/W) * (cos(theta_top) - cos(theta_bottom)).  Values are constant
    along rows and sum to 4*pi.
    """
    if height < 1 or width < 1:
        raise ValueError(f"bad grid {height}x{width}")
    edges = np.cos(np.pi * np.arange(height + 1) / height)
    row = (2.0 * np.pi / width) * (edges[:-1] - edges[1:])
    return np.repeat(row[:, None], width, axis=1)


def pixel_to_direction(row, col, height: int, width: int) -> np.ndarray:
    """Unit direction at the center of pixel (row, col).

    Accepts scalars or arrays; returns shape (..., 3).
    """
    theta = np.pi * (np.asarray(row, dtype=np.float64) + 0.5) / height
    phi = 2.0 * np.pi * (np.asarray(col, dtype=np.float64) + 0.5) / width
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def direction_to_pixel(direction, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the pixel containing each unit direction."""
    d = np.asarray(direction, dtype=np.float64)
    z = np.clip(d[..., 2], -1.0, 1.0)
    theta = np.arccos(z)
    phi = np.mod(np.arctan2(d[..., 1], d[..., 0]), 2.0 * np.pi)
    row = np.minimum((theta / np.pi * height).astype(np.int64), height - 1)
    col = np.minimum((phi / (2.0 * np.pi) * width).astype(np.int64), width - 1)
    return row, col


def grid_directions(height: int, width: int) -> np.ndarray:
    """Directions of all pixel centers, shape (height, width, 3)."""
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return pixel_to_direction(rows, cols, height, width)


def integrate(env: np.ndarray) -> np.ndarray:
    """Total irradiance-style integral: sum of radiance * solid angle.

    Returns one value per channel (shape (C,) for H x W x C input, scalar
    array for a single-channel map).
    """
    env = np.asarray(env, dtype=np.float64)
    omega = solid_angle_map(env.shape[0], env.shape[1])
    if env.ndim == 2:
        return np.sum(env * omega)
    return np.tensordot(omega, env, axes=([0, 1], [0, 1]))


def rotate_longitude(env: np.ndarray, theta_deg: float) -> np.ndarray:
    """Rotate map content about the polar axis by ``theta_deg`` degrees.

    Content moves toward increasing column index for positive angles;
    columns wrap.  Fractional pixel shifts blend linearly between the two
    straddled columns, so integer multiples of (360 / W) are exact rolls.
    """
    env = np.asarray(env)
    shift = (float(theta_deg) / 360.0) * env.shape[1]
    k = int(np.floor(shift))
    f = shift - k
    if f == 0.0:
        return np.roll(env, k, axis=1)
    return (1.0 - f) * np.roll(env, k, axis=1) + f * np.roll(env, k + 1, axis=1)


def resize_bilinear(env: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resample to a new grid by bilinear interpolation at pixel centers.

    Longitude wraps; latitude clamps at the poles.  Constant maps stay
    constant and outputs stay within the input value range.
    """
    env = np.asarray(env)
    sh, sw = env.shape[:2]
    if (sh, sw) == (height, width):
        return env.copy()

    y = (np.arange(height) + 0.5) * (sh / height) - 0.5
    y = np.clip(y, 0.0, sh - 1.0)
    y0 = np.floor(y).astype(np.int64)
    y1 = np.minimum(y0 + 1, sh - 1)
    fy = y - y0

    x = (np.arange(width) + 0.5) * (sw / width) - 0.5
    x = np.mod(x, sw)
    x0 = np.floor(x).astype(np.int64)
    x1 = (x0 + 1) % sw
    fx = x - x0

    if env.ndim == 3:
        fy_ = fy[:, None, None]
        fx_ = fx[None, :, None]
    else:
        fy_ = fy[:, None]
        fx_ = fx[None, :]

    top = (1.0 - fx_) * env[y0][:, x0] + fx_ * env[y0][:, x1]
    bot = (1.0 - fx_) * env[y1][:, x0] + fx_ * env[y1][:, x1]
    return (1.0 - fy_) * top + fy_ * bot


def downsample_area(env: np.ndarray, height: int, width: int) -> np.ndarray:
    """Solid-angle-weighted average onto a coarser grid.

    Each source pixel contributes radiance * solid angle to the target
    pixel containing its center; targets divide by their accumulated
    solid angle.  This keeps the map's integral, which is the right notion
    of downsampling for light maps (unlike bilinear point sampling).
    """
    env = np.asarray(env, dtype=np.float64)
    sh, sw = env.shape[:2]
    if height > sh or width > sw:
        raise ValueError(f"downsample target {height}x{width} exceeds source {sh}x{sw}")
    rows = np.minimum((np.arange(sh) * height) // sh, height - 1)
    cols = np.minimum((np.arange(sw) * width) // sw, width - 1)
    flat = (rows[:, None] * width + cols[None, :]).reshape(-1)
    omega = solid_angle_map(sh, sw).reshape(-1)

    denom = np.bincount(flat, weights=omega, minlength=height * width)
    if env.ndim == 2:
        num = np.bincount(flat, weights=(env.reshape(-1) * omega), minlength=height * width)
        return (num / denom).reshape(height, width)
    channels = env.shape[2]
    out = np.empty((height * width, channels))
    ef = env.reshape(-1, channels)
    for c in range(channels):
        out[:, c] = np.bincount(flat, weights=ef[:, c] * omega, minlength=height * width)
    return (out / denom[:, None]).reshape(height, width, channels)


def validate_envmap(env: np.ndarray, name: str = "envmap") -> np.ndarray:
    """Check shape, finiteness, and non-negativity of a radiance map."""
    env = np.asarray(env)
    if env.ndim not in (2, 3) or (env.ndim == 3 and env.shape[2] != 3):
        raise ValueError(f"{name} must be H x W or H x W x 3, got shape {env.shape}")
    if not np.isfinite(env).all():
        raise ValueError(f"{name} contains non-finite values")
    if env.size and float(env.min()) < 0.0:
        raise ValueError(f"{name} contains negative radiance")
    return env
