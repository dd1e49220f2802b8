"""Light stage model: LED layout, OLAT data, and image-based relighting.

A stage is a set of LED directions on the unit sphere (spherical
Fibonacci layout by default) with a Gaussian angular footprint per LED.
Relit images are weighted sums of one-light-at-a-time (OLAT) captures,
so relighting is exactly linear in the LED weights.  Directions are
camera-relative: the same frame as :mod:`relightkit.envmap`, with the
synthetic camera looking along -z.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import pfm
from .envmap import grid_directions, solid_angle_map, validate_envmap

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


@dataclass
class LightStage:
    """LED directions (n x 3 unit vectors) and their angular sigma in degrees."""

    directions: np.ndarray
    sigma_deg: float = 8.0
    _cells: dict = field(default_factory=dict, repr=False, compare=False)
    _bases: dict = field(default_factory=dict, repr=False, compare=False)
    _norm: float | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=np.float64)
        if d.ndim != 2 or d.shape[1] != 3 or d.shape[0] < 1:
            raise ValueError(f"directions must be n x 3, got shape {d.shape}")
        norms = np.linalg.norm(d, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValueError("LED directions must be unit vectors")
        self.directions = d / norms[:, None]
        if not 0.0 < self.sigma_deg < 90.0:
            raise ValueError(f"sigma_deg must be in (0, 90), got {self.sigma_deg}")

    @property
    def n_leds(self) -> int:
        return self.directions.shape[0]

    def to_json(self, path: str | os.PathLike) -> None:
        payload = {"sigma_deg": self.sigma_deg, "directions": self.directions.tolist()}
        with open(path, "w") as f:
            json.dump(payload, f)

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "LightStage":
        with open(path) as f:
            payload = json.load(f)
        return cls(np.array(payload["directions"]), float(payload["sigma_deg"]))

    # Cached per-grid structures -------------------------------------------

    def cell_index(self, height: int, width: int) -> np.ndarray:
        """Nearest LED for every pixel of an (height, width) grid."""
        key = (height, width)
        cached = self._cells.get(key)
        if cached is None:
            dirs = grid_directions(height, width).reshape(-1, 3)
            # argmax of dot product == nearest on the sphere; computed in
            # blocks to bound memory for large grids.
            idx = np.empty(dirs.shape[0], dtype=np.int64)
            step = 65536
            for s in range(0, dirs.shape[0], step):
                idx[s : s + step] = np.argmax(dirs[s : s + step] @ self.directions.T, axis=1)
            cached = idx.reshape(height, width)
            self._cells[key] = cached
        return cached

    def gaussian_norm(self) -> float:
        """Integral over the sphere of the unnormalized Gaussian lobe.

        exp(-theta^2 / (2 sigma^2)) depends only on the angle to the LED
        axis, so one fine 1-D quadrature in theta serves every LED.
        """
        if self._norm is None:
            sigma = np.deg2rad(self.sigma_deg)
            n = 16384
            theta = (np.arange(n) + 0.5) * (np.pi / n)
            f = np.exp(-(theta**2) / (2.0 * sigma**2)) * np.sin(theta)
            self._norm = float(2.0 * np.pi * f.sum() * (np.pi / n))
        return self._norm

    def basis(self, height: int, width: int) -> np.ndarray:
        """Normalized Gaussian lobes sampled on a grid, shape (H*W, n).

        Column j integrates to ~1 against the grid's solid angles, so a
        weight vector w maps to a radiance map whose integral is ~sum(w).
        """
        key = (height, width)
        cached = self._bases.get(key)
        if cached is None:
            dirs = grid_directions(height, width).reshape(-1, 3)
            cosang = np.clip(dirs @ self.directions.T, -1.0, 1.0)
            ang = np.arccos(cosang)
            sigma = np.deg2rad(self.sigma_deg)
            cached = np.exp(-(ang**2) / (2.0 * sigma**2)) / self.gaussian_norm()
            self._bases[key] = cached
        return cached


def make_stage(n_leds: int = 304, sigma_deg: float = 8.0) -> LightStage:
    """Spherical Fibonacci LED layout; deterministic for a given count.

    LED i sits at z = 1 - (2i + 1)/n with azimuth i * golden angle, which
    spreads points nearly uniformly over the sphere.
    """
    if n_leds < 1:
        raise ValueError(f"need at least one LED, got {n_leds}")
    i = np.arange(n_leds, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n_leds
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * GOLDEN_ANGLE
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return LightStage(dirs, sigma_deg)


def project_env_to_leds(env: np.ndarray, stage: LightStage) -> np.ndarray:
    """Integrate a radiance map over each LED's spherical Voronoi cell.

    Every pixel's radiance * solid angle goes to its nearest LED, so the
    summed LED weights equal the map's integral by construction (same
    summands, regrouped).  Returns (n_leds, 3) for color maps, (n_leds,)
    for single-channel maps.
    """
    env = validate_envmap(np.asarray(env, dtype=np.float64), "env")
    h, w = env.shape[:2]
    cells = stage.cell_index(h, w).reshape(-1)
    omega = solid_angle_map(h, w).reshape(-1)
    if env.ndim == 2:
        return np.bincount(cells, weights=env.reshape(-1) * omega, minlength=stage.n_leds)
    flat = env.reshape(-1, 3)
    out = np.empty((stage.n_leds, 3))
    for c in range(3):
        out[:, c] = np.bincount(cells, weights=flat[:, c] * omega, minlength=stage.n_leds)
    return out


def leds_to_envmap(
    weights: np.ndarray, stage: LightStage, height: int = 16, width: int = 32
) -> np.ndarray:
    """Back-project LED weights to a coarse lat-long map.

    Each LED contributes its weight times a normalized spherical Gaussian
    centered on its direction; the result approximately preserves the
    integral (up to the coarse grid's quadrature error).
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[0] != stage.n_leds:
        raise ValueError(f"{weights.shape[0]} weights for {stage.n_leds} LEDs")
    basis = stage.basis(height, width)
    flat = weights.reshape(stage.n_leds, -1)
    out = basis @ flat
    if weights.ndim == 1:
        return out.reshape(height, width)
    return out.reshape(height, width, *weights.shape[1:])


def relight(olat_images: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted sum of OLAT images: out = sum_j w[j] * image[j].

    ``olat_images`` is (n, H, W, 3); ``weights`` is (n, 3) for per-channel
    weights or (n,) for shared ones.  Accumulation runs in float64 with a
    fixed summation order, and the result is returned in float64, so the
    operation is linear in the weights to near machine precision.
    """
    olat_images = np.asarray(olat_images)
    weights = np.asarray(weights, dtype=np.float64)
    if olat_images.ndim != 4 or olat_images.shape[3] != 3:
        raise ValueError(f"OLAT stack must be n x H x W x 3, got {olat_images.shape}")
    n = olat_images.shape[0]
    if weights.shape not in ((n, 3), (n,)):
        raise ValueError(f"weights shape {weights.shape} does not match {n} LEDs")
    if weights.ndim == 1:
        weights = np.repeat(weights[:, None], 3, axis=1)
    return np.einsum("jhwc,jc->hwc", olat_images, weights, dtype=np.float64, optimize=True)


# ---------------------------------------------------------------------------
# Synthetic OLAT rendering
# ---------------------------------------------------------------------------


@dataclass
class SceneProxy:
    """A Lambertian-plus-Phong sphere viewed by an orthographic camera.

    The camera looks along -z; the image plane is x (right) and y (up,
    row 0 at the top).  ``center`` and ``radius`` are in normalized image
    coordinates [-1, 1].  A radius well above 1 puts the silhouette
    outside the frame, leaving a low-relief dome of near-frontal
    normals, the close-up regime where shading is driven almost
    entirely by light latitude.
    """

    albedo: tuple[float, float, float] = (0.8, 0.6, 0.5)
    specular: float = 0.25
    exponent: float = 32.0
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.85

    def __post_init__(self):
        if not 0.0 < self.radius <= 8.0:
            raise ValueError(f"radius {self.radius} out of range")
        if min(self.albedo) < 0.0 or self.specular < 0.0:
            raise ValueError("albedo and specular must be non-negative")
        if self.exponent <= 0.0:
            raise ValueError("specular exponent must be positive")


@dataclass
class OlatSet:
    """One OLAT capture: n aligned images, a mask, and stage metadata."""

    images: np.ndarray  # (n, H, W, 3) float32, linear
    mask: np.ndarray  # (H, W) float32 in [0, 1]
    stage: LightStage
    subject_id: str = "sphere"
    camera_id: str = "cam0"

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[3] != 3:
            raise ValueError(f"images must be n x H x W x 3, got {self.images.shape}")
        if self.images.shape[0] != self.stage.n_leds:
            raise ValueError(
                f"{self.images.shape[0]} images for a {self.stage.n_leds}-LED stage"
            )
        if self.mask.shape != self.images.shape[1:3]:
            raise ValueError(f"mask shape {self.mask.shape} does not match images")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.images.shape[1:3]


def render_olat_synthetic(
    scene: SceneProxy, stage: LightStage, resolution: int = 128
) -> OlatSet:
    """Render one image per LED of a unit-intensity distant light.

    Shading per pixel: albedo/pi * max(0, n.l) plus a Phong lobe
    specular * max(0, n.h)^exponent toward the viewer.  Pixels off the
    sphere are black; the mask is the sphere's coverage.
    """
    if resolution < 4:
        raise ValueError(f"resolution {resolution} too small")
    px = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    xs, ys = np.meshgrid(px, -px, indexing="xy")
    dx = (xs - scene.center[0]) / scene.radius
    dy = (ys - scene.center[1]) / scene.radius
    rr = dx * dx + dy * dy
    inside = rr <= 1.0
    nz = np.sqrt(np.maximum(0.0, 1.0 - rr))
    normals = np.stack([dx, dy, nz], axis=-1)
    normals[~inside] = 0.0

    view = np.array([0.0, 0.0, 1.0])
    albedo = np.asarray(scene.albedo, dtype=np.float64)
    images = np.zeros((stage.n_leds, resolution, resolution, 3), dtype=np.float32)
    for j, led in enumerate(stage.directions):
        ndotl = np.maximum(0.0, normals @ led)
        half = led + view
        half = half / np.linalg.norm(half)
        ndoth = np.maximum(0.0, normals @ half)
        shade = ndotl[..., None] * (albedo / np.pi) + (
            scene.specular * ndoth**scene.exponent
        )[..., None]
        shade[~inside] = 0.0
        images[j] = shade.astype(np.float32)
    return OlatSet(images, inside.astype(np.float32), stage)


# ---------------------------------------------------------------------------
# OLAT directory format
# ---------------------------------------------------------------------------


def save_olat(directory: str | os.PathLike, olat: OlatSet) -> None:
    """Write an OLAT set: manifest.json, one PFM per LED, and the mask."""
    os.makedirs(directory, exist_ok=True)
    names = [f"led_{j:04d}.pfm" for j in range(olat.stage.n_leds)]
    for name, img in zip(names, olat.images):
        pfm.write_pfm(os.path.join(directory, name), img)
    pfm.write_pfm(os.path.join(directory, "mask.pfm"), olat.mask)
    manifest = {
        "format_version": 1,
        "subject_id": olat.subject_id,
        "camera_id": olat.camera_id,
        "sigma_deg": olat.stage.sigma_deg,
        "directions": olat.stage.directions.tolist(),
        "images": names,
        "mask": "mask.pfm",
    }
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f)


def load_olat(directory: str | os.PathLike) -> OlatSet:
    path = os.path.join(directory, "manifest.json")
    with open(path) as f:
        manifest = json.load(f)
    stage = LightStage(np.array(manifest["directions"]), float(manifest["sigma_deg"]))
    images = np.stack(
        [pfm.read_pfm(os.path.join(directory, name)) for name in manifest["images"]]
    )
    mask = pfm.read_pfm(os.path.join(directory, manifest["mask"]))
    return OlatSet(
        images,
        mask,
        stage,
        subject_id=manifest.get("subject_id", "unknown"),
        camera_id=manifest.get("camera_id", "unknown"),
    )
