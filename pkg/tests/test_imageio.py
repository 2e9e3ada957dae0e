"""PNG serialization round-trips and determinism."""

from __future__ import annotations

import numpy as np
import pytest

from shadowsteer.imageio import (
    base64_png_to_mask,
    image_to_png_bytes,
    mask_to_base64_png,
    mask_to_png_bytes,
    png_bytes_to_image,
    png_bytes_to_mask,
    png_bytes_to_scalar_map,
    quantize16,
    scalar_map_to_png_bytes,
)


def test_scalar_map_roundtrip_exact_on_lattice():
    rng = np.random.default_rng(0)
    grid = quantize16(rng.uniform(0, 1, size=(16, 16)))
    restored = png_bytes_to_scalar_map(scalar_map_to_png_bytes(grid))
    assert np.array_equal(restored, grid)


def test_scalar_map_quantization_rule():
    grid = np.array([[0.0, 1.0], [0.5, 0.25]])
    first = scalar_map_to_png_bytes(grid)
    restored = png_bytes_to_scalar_map(first)
    np.testing.assert_allclose(restored, np.round(grid * 65535) / 65535, atol=1e-12)


def test_scalar_map_writer_deterministic():
    rng = np.random.default_rng(1)
    grid = rng.uniform(0, 1, size=(32, 32))
    assert scalar_map_to_png_bytes(grid) == scalar_map_to_png_bytes(grid.copy())


def test_scalar_map_range_validated():
    with pytest.raises(ValueError):
        scalar_map_to_png_bytes(np.full((4, 4), 1.2))


def test_mask_threshold_at_128():
    from PIL import Image
    import io

    arr = np.array([[0, 127, 128, 255]], dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    mask = png_bytes_to_mask(buf.getvalue())
    assert mask.tolist() == [[0.0, 0.0, 1.0, 1.0]]


def test_mask_roundtrip():
    rng = np.random.default_rng(2)
    mask = (rng.uniform(size=(16, 16)) > 0.5).astype(float)
    assert np.array_equal(png_bytes_to_mask(mask_to_png_bytes(mask)), mask)
    assert np.array_equal(base64_png_to_mask(mask_to_base64_png(mask)), mask)


def test_image_roundtrip_within_8bit():
    rng = np.random.default_rng(3)
    image = rng.uniform(0, 1, size=(8, 8, 3))
    restored = png_bytes_to_image(image_to_png_bytes(image))
    assert np.abs(restored - image).max() <= 0.5 / 255 + 1e-9


def test_image_writer_deterministic():
    rng = np.random.default_rng(4)
    image = rng.uniform(0, 1, size=(8, 8, 3))
    assert image_to_png_bytes(image) == image_to_png_bytes(image.copy())
