"""Portable FloatMap (PFM) reading and writing, plus PNG export.

PFM holds linear float32 images: a text header ("PF" for 3 channels,
"Pf" for 1), dimensions, and a scale whose sign encodes endianness
(negative = little-endian).  Scanlines are stored bottom-to-top; this
module flips them so in-memory arrays are always top-down, and a write
followed by a read returns bit-identical data.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image


class PfmError(IOError):
    """Malformed or truncated PFM data."""


def _read_token(f, path) -> bytes:
    token = b""
    while True:
        ch = f.read(1)
        if ch == b"":
            raise PfmError(f"{path}: truncated header at byte {f.tell()}")
        if ch in b" \t\r\n":
            if token:
                return token
            continue
        token += ch


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    """Load a PFM file as float32, shape H x W x 3 ('PF') or H x W ('Pf')."""
    with open(path, "rb") as f:
        magic = _read_token(f, path)
        if magic not in (b"PF", b"Pf"):
            raise PfmError(f"{path}: bad magic {magic!r}, expected 'PF' or 'Pf'")
        channels = 3 if magic == b"PF" else 1
        try:
            width = int(_read_token(f, path))
            height = int(_read_token(f, path))
            scale = float(_read_token(f, path))
        except ValueError as e:
            raise PfmError(f"{path}: bad header field ({e})") from None
        if width <= 0 or height <= 0:
            raise PfmError(f"{path}: bad dimensions {width}x{height}")
        if scale == 0.0:
            raise PfmError(f"{path}: zero scale")
        dtype = "<f4" if scale < 0 else ">f4"
        count = width * height * channels
        raw = f.read(4 * count)
        if len(raw) < 4 * count:
            raise PfmError(
                f"{path}: truncated pixel data at byte {f.tell()}, "
                f"expected {4 * count} bytes"
            )
        data = np.frombuffer(raw, dtype=dtype, count=count)
    shape = (height, width, 3) if channels == 3 else (height, width)
    img = data.reshape(shape)[::-1].astype(np.float32)  # bottom-up on disk
    mag = abs(scale)
    if mag != 1.0:
        img = img * np.float32(mag)
    return np.ascontiguousarray(img)


def write_pfm(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write float32 data as little-endian PFM (scale -1.0).

    Accepts H x W x 3 or H x W arrays; anything else is rejected.
    """
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[2] == 3:
        magic = b"PF"
    elif image.ndim == 2:
        magic = b"Pf"
    else:
        raise ValueError(f"PFM image must be H x W x 3 or H x W, got shape {image.shape}")
    if not np.isfinite(image).all():
        raise ValueError(f"refusing to write non-finite values to {path}")
    height, width = image.shape[:2]
    data = image[::-1].astype("<f4")
    with open(path, "wb") as f:
        f.write(magic + b"\n")
        f.write(f"{width} {height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(data.tobytes())


def export_png(path: str | os.PathLike, image: np.ndarray, gamma: float = 2.2) -> None:
    """Tone-map linear values to an 8-bit PNG.

    Values are clipped to [0, 1], raised to 1/gamma, scaled by 255, and
    rounded half away from zero (linear 0.5 becomes byte 186 with the
    default gamma).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim not in (2, 3):
        raise ValueError(f"image must be 2-D or H x W x 3, got shape {image.shape}")
    encoded = np.clip(image, 0.0, 1.0) ** (1.0 / gamma)
    bytes_ = np.floor(encoded * 255.0 + 0.5).astype(np.uint8)
    mode = "L" if image.ndim == 2 else "RGB"
    Image.fromarray(bytes_, mode=mode).save(path)
