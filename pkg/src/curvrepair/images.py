"""PNG helpers for 8-bit RGB charts and binary masks."""

from __future__ import annotations

import numpy as np
from PIL import Image


def save_png(path, array: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 image or an (H, W) bool mask as PNG."""
    arr = np.asarray(array)
    if arr.dtype == bool:
        Image.fromarray(arr.astype(np.uint8) * 255, mode="L").save(path)
    elif arr.ndim == 3 and arr.shape[2] == 3 and arr.dtype == np.uint8:
        Image.fromarray(arr, mode="RGB").save(path)
    else:
        raise ValueError("expected (H, W, 3) uint8 or (H, W) bool")


def load_rgb(path) -> np.ndarray:
    """Read a PNG as (H, W, 3) uint8."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def load_mask(path) -> np.ndarray:
    """Read a PNG as (H, W) bool; any channel value above 127 is masked."""
    with Image.open(path) as im:
        gray = np.asarray(im.convert("L"))
    return gray > 127
