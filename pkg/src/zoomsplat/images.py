"""PNG import/export for float RGB images in [0, 1]."""

from __future__ import annotations

import numpy as np
from PIL import Image


def load_image(path) -> np.ndarray:
    """Load a PNG as (H, W, 3) float64 in [0, 1]."""
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def save_image(image: np.ndarray, path) -> None:
    """Write (H, W, 3) floats in [0, 1] as 8-bit RGB PNG."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8), mode="RGB").save(path)


def encode_png(image: np.ndarray) -> bytes:
    """8-bit RGB PNG bytes for streaming (light compression, still lossless)."""
    import io

    arr = np.clip(np.asarray(image), 0.0, 1.0)
    buf = io.BytesIO()
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8), mode="RGB").save(
        buf, format="PNG", compress_level=1)
    return buf.getvalue()
