"""PNG loading/saving for RGBA rasters stored as float arrays in [0, 1]."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from .errors import InvalidInputError


def load_image_rgba(path) -> np.ndarray:
    """Read an image file as an (H, W, 4) float64 array in [0, 1]."""
    with Image.open(path) as im:
        rgba = im.convert("RGBA")
        return np.asarray(rgba, dtype=np.float64) / 255.0


def quantize_rgba(pixels: np.ndarray) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 3 or pixels.shape[2] not in (3, 4):
        raise InvalidInputError(f"expected (H, W, 3|4) pixels, got {pixels.shape}")
    return np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)


def save_image_rgba(pixels: np.ndarray, path) -> None:
    """Quantize to 8 bits and write a PNG."""
    q = quantize_rgba(pixels)
    mode = "RGBA" if q.shape[2] == 4 else "RGB"
    Image.fromarray(q, mode=mode).save(path, format="PNG")


def encode_png_bytes(pixels: np.ndarray) -> bytes:
    q = quantize_rgba(pixels)
    mode = "RGBA" if q.shape[2] == 4 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(q, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def decode_png_bytes(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        rgba = im.convert("RGBA")
        return np.asarray(rgba, dtype=np.float64) / 255.0
