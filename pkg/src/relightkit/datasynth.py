"""Training pair synthesis from OLAT captures and environment maps.

A pair is one subject crop rendered under a source and a target
environment, with the matching coarse light maps, plus a longitude-
jittered rerender of the source used for self-supervision.  Every random
choice for pair ``i`` comes from an independent PRNG stream derived from
(seed, i), and all choices are recorded in the dataset manifest, so any
pair can be regenerated bit-identically from the manifest alone.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import pfm
from .envmap import resize_bilinear, rotate_longitude, validate_envmap
from .lightstage import OlatSet, leds_to_envmap, project_env_to_leds, relight

MANIFEST_NAME = "manifest.json"


@dataclass
class CropSpec:
    """Square crop side as a fraction of the shorter image side."""

    min_fraction: float = 0.28
    max_fraction: float = 0.57

    def __post_init__(self):
        if not 0.0 < self.min_fraction <= self.max_fraction <= 1.0:
            raise ValueError(f"bad crop fractions [{self.min_fraction}, {self.max_fraction}]")


@dataclass
class SynthConfig:
    resolution: int = 256
    light_shape: tuple[int, int] = (16, 32)
    env_shape: tuple[int, int] = (128, 256)
    crop: CropSpec = field(default_factory=CropSpec)
    max_retries: int = 16


@dataclass
class PairParams:
    """The random draws behind one pair; sufficient for exact regeneration."""

    olat_id: str
    env_src_id: str
    env_tgt_id: str
    crop_y: int
    crop_x: int
    crop_side: int
    rot_src_deg: float
    rot_tgt_deg: float
    theta_jitter_deg: float


@dataclass
class TrainingPair:
    image_src: np.ndarray
    image_tgt: np.ndarray
    image_src_jit: np.ndarray
    light_src: np.ndarray
    light_tgt: np.ndarray
    light_src_jit: np.ndarray
    mask: np.ndarray
    theta_jitter_deg: float
    scale_src: float
    scale_tgt: float
    params: PairParams | None = None


class EmptyCropError(RuntimeError):
    """No usable crop was found within the retry budget."""


def _draw_params(
    olat_id: str,
    env_src_id: str,
    env_tgt_id: str,
    shape: tuple[int, int],
    crop: CropSpec,
    rng: np.random.Generator,
) -> PairParams:
    h, w = shape
    frac = rng.uniform(crop.min_fraction, crop.max_fraction)
    side = max(4, int(round(frac * min(h, w))))
    side = min(side, h, w)
    y = int(rng.integers(0, h - side + 1))
    x = int(rng.integers(0, w - side + 1))
    return PairParams(
        olat_id=olat_id,
        env_src_id=env_src_id,
        env_tgt_id=env_tgt_id,
        crop_y=y,
        crop_x=x,
        crop_side=side,
        rot_src_deg=float(rng.uniform(0.0, 360.0)),
        rot_tgt_deg=float(rng.uniform(0.0, 360.0)),
        theta_jitter_deg=float(rng.uniform(0.0, 360.0)),
    )


def _render_branch(crop_stack, env, rot_deg, stage, config):
    """Rotate, resize, project, relight, back-project; one illumination."""
    rotated = rotate_longitude(env, rot_deg)
    resized = resize_bilinear(rotated, *config.env_shape)
    weights = project_env_to_leds(resized, stage)
    image = relight(crop_stack, weights)
    light = leds_to_envmap(weights, stage, *config.light_shape)
    d = config.resolution
    return resize_bilinear(image, d, d), light


def synth_pair_from_params(
    olat: OlatSet,
    env_src: np.ndarray,
    env_tgt: np.ndarray,
    params: PairParams,
    config: SynthConfig | None = None,
) -> TrainingPair:
    """Deterministically build the pair described by ``params``.

    Raises :class:`EmptyCropError` if the recorded crop misses the subject
    or renders black (callers drawing fresh params retry; manifest-driven
    regeneration should never hit this).
    """
    config = config or SynthConfig()
    y, x, side = params.crop_y, params.crop_x, params.crop_side
    mask_crop = olat.mask[y : y + side, x : x + side]
    if mask_crop.max() <= 0.0:
        raise EmptyCropError(f"crop ({y},{x})+{side} does not touch the mask")

    crop_stack = olat.images[:, y : y + side, x : x + side, :] * mask_crop[None, :, :, None]

    d = config.resolution
    image_src, light_src = _render_branch(crop_stack, env_src, params.rot_src_deg, olat.stage, config)
    image_tgt, light_tgt = _render_branch(crop_stack, env_tgt, params.rot_tgt_deg, olat.stage, config)

    peak_src = float(image_src.max())
    peak_tgt = float(image_tgt.max())
    if peak_src <= 0.0 or peak_tgt <= 0.0:
        raise EmptyCropError(f"crop ({y},{x})+{side} rendered black")
    scale_src = 1.0 / peak_src
    scale_tgt = 1.0 / peak_tgt

    # The jittered source rerender reuses the source scale so that the
    # self-supervision target lives in the same exposure as the source.
    image_jit, light_jit = _render_branch(
        crop_stack,
        rotate_longitude(env_src, params.rot_src_deg),
        params.theta_jitter_deg,
        olat.stage,
        config,
    )

    mask = resize_bilinear(mask_crop, d, d)
    return TrainingPair(
        image_src=(image_src * scale_src).astype(np.float32),
        image_tgt=(image_tgt * scale_tgt).astype(np.float32),
        image_src_jit=(image_jit * scale_src).astype(np.float32),
        light_src=(light_src * scale_src).astype(np.float32),
        light_tgt=(light_tgt * scale_tgt).astype(np.float32),
        light_src_jit=(light_jit * scale_src).astype(np.float32),
        mask=mask.astype(np.float32),
        theta_jitter_deg=params.theta_jitter_deg,
        scale_src=scale_src,
        scale_tgt=scale_tgt,
        params=params,
    )


def synth_pair(
    olat: OlatSet,
    env_src: np.ndarray,
    env_tgt: np.ndarray,
    rng: np.random.Generator,
    config: SynthConfig | None = None,
    ids: tuple[str, str, str] = ("olat", "env_src", "env_tgt"),
) -> TrainingPair:
    """Draw crop/rotation parameters and synthesize one pair.

    Rejected crops (missing the subject, or rendering black) are re-drawn
    up to ``config.max_retries`` times; every attempt consumes the same
    number of PRNG draws, so outcomes depend only on the stream state.
    """
    config = config or SynthConfig()
    validate_envmap(env_src, "env_src")
    validate_envmap(env_tgt, "env_tgt")
    last = None
    for _ in range(config.max_retries):
        params = _draw_params(ids[0], ids[1], ids[2], olat.resolution, config.crop, rng)
        try:
            return synth_pair_from_params(olat, env_src, env_tgt, params, config)
        except EmptyCropError as e:
            last = e
    raise EmptyCropError(f"no usable crop in {config.max_retries} attempts: {last}")


# ---------------------------------------------------------------------------
# Synthetic environments
# ---------------------------------------------------------------------------

def synthetic_envmaps(
    count: int, height: int = 64, width: int = 128, seed: int = 0
) -> dict[str, np.ndarray]:
    """Random single-dominant-light environments, keyed by id.

    Each map is a dim ambient level plus one bright colored Gaussian blob,
    which gives training data an unambiguous dominant light.  The blob
    center is kept in the camera-facing hemisphere but well away from the
    view axis: a light sitting almost on the axis shades the subject
    nearly the same at every azimuth, so its longitude would be invisible
    in the images, while a frontal-but-oblique light leaves a clear
    directional signature.
    """
    from .envmap import grid_directions

    dirs = grid_directions(height, width)
    envs: dict[str, np.ndarray] = {}
    for i in range(count):
        rng = np.random.default_rng([seed, 9000 + i])
        ambient = rng.uniform(0.005, 0.02)
        z = rng.uniform(0.15, 0.7)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        r = np.sqrt(1.0 - z * z)
        center = np.array([r * np.cos(phi), r * np.sin(phi), z])
        sigma = np.deg2rad(rng.uniform(8.0, 14.0))
        peak = rng.uniform(6.0, 12.0)
        tint = rng.uniform(0.6, 1.0, size=3)
        ang = np.arccos(np.clip(dirs @ center, -1.0, 1.0))
        blob = peak * np.exp(-(ang**2) / (2.0 * sigma**2))
        env = ambient + blob[:, :, None] * tint
        envs[f"env{i:03d}"] = env.astype(np.float64)
    return envs


# ---------------------------------------------------------------------------
# Datasets on disk
# ---------------------------------------------------------------------------

_PAIR_FILES = {
    "image_src": "src.pfm",
    "image_tgt": "tgt.pfm",
    "image_src_jit": "src_jit.pfm",
    "light_src": "light_src.pfm",
    "light_tgt": "light_tgt.pfm",
    "light_src_jit": "light_src_jit.pfm",
    "mask": "mask.pfm",
}


def save_pair(root: str | os.PathLike, index: int, pair: TrainingPair) -> None:
    d = os.path.join(root, "pairs", str(index))
    os.makedirs(d, exist_ok=True)
    for attr, name in _PAIR_FILES.items():
        pfm.write_pfm(os.path.join(d, name), getattr(pair, attr))


def load_pair(root: str | os.PathLike, record: dict) -> TrainingPair:
    d = os.path.join(root, "pairs", str(record["index"]))
    arrays = {attr: pfm.read_pfm(os.path.join(d, name)) for attr, name in _PAIR_FILES.items()}
    return TrainingPair(
        **arrays,
        theta_jitter_deg=float(record["params"]["theta_jitter_deg"]),
        scale_src=float(record["scale_src"]),
        scale_tgt=float(record["scale_tgt"]),
        params=PairParams(**record["params"]),
    )


def build_dataset(
    out_dir: str | os.PathLike,
    olat_sets: dict[str, OlatSet],
    envs: dict[str, np.ndarray],
    count: int,
    seed: int,
    config: SynthConfig | None = None,
    split: str = "train",
) -> dict:
    """Synthesize ``count`` pairs and write them plus a manifest.

    Subject and environment choices for pair ``i`` come from the stream
    (seed, i), so datasets are reproducible pair-by-pair and insensitive
    to generation order.
    """
    config = config or SynthConfig()
    if not olat_sets or not envs:
        raise ValueError("need at least one OLAT set and one environment")
    olat_ids = sorted(olat_sets)
    env_ids = sorted(envs)
    records = []
    for index in range(count):
        rng = np.random.default_rng([seed, index])
        olat_id = olat_ids[int(rng.integers(len(olat_ids)))]
        env_src_id = env_ids[int(rng.integers(len(env_ids)))]
        env_tgt_id = env_ids[int(rng.integers(len(env_ids)))]
        pair = synth_pair(
            olat_sets[olat_id],
            envs[env_src_id],
            envs[env_tgt_id],
            rng,
            config,
            ids=(olat_id, env_src_id, env_tgt_id),
        )
        save_pair(out_dir, index, pair)
        records.append(
            {
                "index": index,
                "scale_src": pair.scale_src,
                "scale_tgt": pair.scale_tgt,
                "params": asdict(pair.params),
            }
        )
    manifest = {
        "format_version": 1,
        "split": split,
        "seed": seed,
        "count": count,
        "resolution": config.resolution,
        "light_shape": list(config.light_shape),
        "env_shape": list(config.env_shape),
        "crop": asdict(config.crop),
        "olat_ids": olat_ids,
        "env_ids": env_ids,
        "records": records,
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest


class ManifestError(IOError):
    pass


def load_manifest(path: str | os.PathLike) -> dict:
    p = str(path)
    if os.path.isdir(p):
        p = os.path.join(p, MANIFEST_NAME)
    try:
        with open(p) as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise ManifestError(f"no dataset manifest at {p}") from None
    except json.JSONDecodeError as e:
        raise ManifestError(f"{p} is not valid JSON ({e})") from None
    for key in ("records", "resolution", "light_shape", "olat_ids", "env_ids"):
        if key not in manifest:
            raise ManifestError(f"{p} is missing the {key!r} field")
    manifest["_root"] = os.path.dirname(os.path.abspath(p))
    return manifest


def assert_split_hygiene(manifests: list[dict]) -> None:
    """Raise if any OLAT set or environment id appears in two splits."""
    seen_olat: dict[str, str] = {}
    seen_env: dict[str, str] = {}
    for m in manifests:
        split = m.get("split", "?")
        for oid in m["olat_ids"]:
            if seen_olat.get(oid, split) != split:
                raise ValueError(f"OLAT set {oid!r} appears in splits {seen_olat[oid]!r} and {split!r}")
            seen_olat[oid] = split
        for eid in m["env_ids"]:
            if seen_env.get(eid, split) != split:
                raise ValueError(f"envmap {eid!r} appears in splits {seen_env[eid]!r} and {split!r}")
            seen_env[eid] = split
