"""PNG reading and writing. Quantization to 8 bits happens only here."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def write_png(path, image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    q = np.round(arr * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    # no metadata chunks, so identical pixels give identical bytes
    Image.fromarray(q, mode="RGB").save(path, format="PNG", optimize=False, compress_level=6)


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def png_size(path) -> tuple[int, int]:
    """(height, width) without decoding pixels."""
    with Image.open(path) as im:
        w, h = im.size
    return h, w
