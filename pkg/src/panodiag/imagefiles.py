"""Raster file I/O: 8-bit grayscale PNG and PGM.

Color inputs collapse to grayscale by luminance; 16-bit grayscale drops
to 8 bits by taking the high byte.  Writing picks the format from the
file suffix.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .imaging import ImagingError, RasterImage

__all__ = ["read_image", "write_image"]

_SUFFIXES = (".png", ".pgm")
_WIDE_MODES = ("I", "I;16", "I;16B", "I;16L", "I;16N")


def read_image(path: str | Path) -> RasterImage:
    with Image.open(path) as img:
        if img.mode in _WIDE_MODES:
            wide = np.asarray(img, dtype=np.uint32)
            arr = np.clip(wide >> 8, 0, 255).astype(np.uint8)
        else:
            arr = np.asarray(img.convert("L"), dtype=np.uint8)
    return RasterImage(arr)


def write_image(image: RasterImage, path: str | Path) -> None:
    suffix = Path(path).suffix.lower()
    if suffix not in _SUFFIXES:
        raise ImagingError(f"unsupported image suffix {suffix!r}; use one of {_SUFFIXES}")
    Image.fromarray(np.asarray(image.pixels), mode="L").save(path)
