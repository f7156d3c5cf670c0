"""Binary PPM (P6) and PGM (P5) image files.

P6 carries RGB images: u8 values map to [-1, 1] via v / 127.5 - 1 on
read; writes invert that with round-half-away-from-zero after clamping,
so 0 <-> -1.0 and 255 <-> +1.0 survive exactly. Heat maps go to P5 with
[0, 2] mapped linearly onto 0..255 (difference maps of [-1,1] images
cannot exceed 2). Only maxval 255 is accepted.
"""

from __future__ import annotations

import os

import numpy as np


class ImageFormatError(Exception):
    pass


def _read_tokens(data: bytes, count: int, pos: int):
    """PNM header tokens: whitespace-separated, '#' starts a comment."""
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos] == ord("#"):
            while pos < n and data[pos] not in (10, 13):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("header truncated")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # consume single whitespace after maxval


def _parse_pnm(data: bytes, magic: bytes, channels: int) -> np.ndarray:
    if data[:2] != magic:
        raise ImageFormatError(f"bad magic {data[:2]!r}, want {magic.decode()}")
    tokens, pos = _read_tokens(data, 3, 2)
    width, height, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise ImageFormatError(f"maxval {maxval} unsupported (need 255)")
    need = width * height * channels
    raster = data[pos : pos + need]
    if len(raster) != need:
        raise ImageFormatError(f"raster truncated: {len(raster)} of {need} bytes")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)


def read_ppm(path) -> np.ndarray:
    """P6 file -> [3, H, W] float64 in [-1, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    img = _parse_pnm(data, b"P6", 3)
    return img.astype(np.float64).transpose(2, 0, 1) / 127.5 - 1.0


def _quantize(v: np.ndarray) -> np.ndarray:
    # round half away from zero; values are >= 0 here
    return np.floor(v + 0.5).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """[3, H, W] in [-1, 1] (clamped) -> binary P6."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ImageFormatError(f"expected [3,H,W], got {image.shape}")
    _, h, w = image.shape
    raster = _quantize((np.clip(image.transpose(1, 2, 0), -1.0, 1.0) + 1.0) * 127.5)
    _atomic_write(path, b"P6\n%d %d\n255\n" % (w, h) + raster.tobytes())


def read_pgm(path) -> np.ndarray:
    """P5 file -> [H, W] float64 in [0, 2]."""
    with open(path, "rb") as f:
        data = f.read()
    img = _parse_pnm(data, b"P5", 1)
    return img[:, :, 0].astype(np.float64) / 127.5


def write_pgm(path, heat: np.ndarray) -> None:
    """[H, W] heat values in [0, 2] (clamped) -> binary P5."""
    heat = np.asarray(heat, dtype=np.float64)
    if heat.ndim != 2:
        raise ImageFormatError(f"expected [H,W], got {heat.shape}")
    h, w = heat.shape
    raster = _quantize(np.clip(heat, 0.0, 2.0) * 127.5)
    _atomic_write(path, b"P5\n%d %d\n255\n" % (w, h) + raster.tobytes())


def _atomic_write(path, data: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)
