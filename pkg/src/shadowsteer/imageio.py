"""PNG serialization for the package's map and image types.

Depth and shadow maps travel as single-channel 16-bit PNGs with
value = round(v * 65535); binary masks as 8-bit PNGs thresholded at 128;
RGB images as plain 8-bit PNGs. All writers are deterministic: identical
arrays produce identical bytes.
"""

from __future__ import annotations

import base64
import io
from pathlib import Path

import numpy as np
from PIL import Image


def scalar_map_to_png_bytes(grid: np.ndarray) -> bytes:
    """Encode an H x W float grid in [0, 1] as a 16-bit grayscale PNG."""
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected 2D grid, got shape {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("grid values must lie in [0, 1]")
    quantized = np.round(arr * 65535.0).astype(np.uint16)
    buf = io.BytesIO()
    Image.fromarray(quantized).save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_scalar_map(data: bytes) -> np.ndarray:
    """Decode a 16-bit grayscale PNG back to floats in [0, 1]."""
    img = Image.open(io.BytesIO(data))
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64) / 65535.0


def save_scalar_map(path: str | Path, grid: np.ndarray) -> None:
    Path(path).write_bytes(scalar_map_to_png_bytes(grid))


def load_scalar_map(path: str | Path) -> np.ndarray:
    return png_bytes_to_scalar_map(Path(path).read_bytes())


def quantize16(grid: np.ndarray) -> np.ndarray:
    """Round a [0, 1] grid to the 16-bit lattice so PNG round-trips are exact."""
    return np.round(np.asarray(grid, dtype=np.float64) * 65535.0) / 65535.0


def mask_to_png_bytes(mask: np.ndarray) -> bytes:
    """Encode a {0,1} mask as an 8-bit grayscale PNG (0 or 255)."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"expected 2D mask, got shape {arr.shape}")
    buf = io.BytesIO()
    Image.fromarray((arr > 0).astype(np.uint8) * 255, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_mask(data: bytes) -> np.ndarray:
    """Decode a mask PNG, thresholding intensities at 128."""
    img = Image.open(io.BytesIO(data)).convert("L")
    return (np.asarray(img) >= 128).astype(np.float64)


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    Path(path).write_bytes(mask_to_png_bytes(mask))


def load_mask(path: str | Path) -> np.ndarray:
    return png_bytes_to_mask(Path(path).read_bytes())


def image_to_png_bytes(image: np.ndarray) -> bytes:
    """Encode an H x W x 3 float image in [0, 1] as an 8-bit RGB PNG."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got shape {arr.shape}")
    quantized = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(quantized, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_image(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    return np.asarray(img).astype(np.float64) / 255.0


def save_image(path: str | Path, image: np.ndarray) -> None:
    Path(path).write_bytes(image_to_png_bytes(image))


def load_image(path: str | Path) -> np.ndarray:
    return png_bytes_to_image(Path(path).read_bytes())


def mask_to_base64_png(mask: np.ndarray) -> str:
    return base64.b64encode(mask_to_png_bytes(mask)).decode("ascii")


def base64_png_to_mask(payload: str) -> np.ndarray:
    return png_bytes_to_mask(base64.b64decode(payload))
