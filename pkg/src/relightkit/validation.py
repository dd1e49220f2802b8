"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np


def check_image(a, name: str = "image", resolution: int | None = None) -> np.ndarray:
    """Validate an (H, W, 3) float image and return it as float32."""
    a = np.asarray(a)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {a.shape}")
    if not np.issubdtype(a.dtype, np.floating):
        raise ValueError(f"{name} must be floating point, got {a.dtype}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    if resolution is not None and a.shape[:2] != (resolution, resolution):
        raise ValueError(
            f"{name} must be {resolution}x{resolution}, got {a.shape[0]}x{a.shape[1]}"
        )
    return np.ascontiguousarray(a, dtype=np.float32)


def check_light(a, name: str = "light", shape: tuple[int, int] | None = None) -> np.ndarray:
    """Validate an (H, W, 3) non-negative radiance map, return float32."""
    a = check_image(a, name, None)
    if np.any(a < 0.0):
        raise ValueError(f"{name} must be non-negative radiance")
    if shape is not None and a.shape[:2] != tuple(shape):
        raise ValueError(f"{name} must be {shape[0]}x{shape[1]}, got {a.shape[0]}x{a.shape[1]}")
    return a


def check_mask(m, name: str = "mask", size: tuple[int, int] | None = None) -> np.ndarray:
    """Validate an (H, W) mask with values in [0, 1], return float32."""
    m = np.asarray(m)
    if m.ndim == 3 and m.shape[2] == 1:
        m = m[:, :, 0]
    if m.ndim != 2:
        raise ValueError(f"{name} must have shape (H, W), got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite values")
    if m.min() < 0.0 or m.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    if size is not None and m.shape != tuple(size):
        raise ValueError(f"{name} must be {size[0]}x{size[1]}, got {m.shape}")
    return np.ascontiguousarray(m, dtype=np.float32)


def check_theta(theta) -> float:
    theta = float(theta)
    if not np.isfinite(theta):
        raise ValueError("rotation angle must be finite")
    return theta
