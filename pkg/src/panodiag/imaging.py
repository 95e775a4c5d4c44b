"""Pixel geometry for radiograph inspection tools.

Everything here works on 8-bit grayscale rasters and half-open integer
regions.  The two inspection tools are built from the same four primitives:
``crop``, ``pad_region``, ``mirror_region``, and ``mirror_pixels``.  Mirror
geometry is exact on the integer grid: reflecting a region twice returns the
original region, and reflecting pixels twice returns the original raster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ImagingError",
    "DegenerateRegion",
    "RegionOutOfBounds",
    "Region",
    "Bounds",
    "RasterImage",
    "DualView",
    "crop",
    "pad_region",
    "mirror_region",
    "mirror_pixels",
    "zoom_in",
    "mirror_in",
]


class ImagingError(ValueError):
    """Base class for geometry and raster failures."""


class DegenerateRegion(ImagingError):
    """Region has zero or negative extent on some axis."""


class RegionOutOfBounds(ImagingError):
    """Region does not fit inside the raster it is applied to."""


@dataclass(frozen=True)
class Bounds:
    """A bare width and height, for geometry calls that need no pixels."""

    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ImagingError(f"bounds must be at least 1x1, got {self.width}x{self.height}")


@dataclass(frozen=True)
class Region:
    """Axis-aligned half-open rectangle [x1, x2) x [y1, y2).

    Coordinates are integer pixel indices.  Construction rejects negative
    origins and degenerate extents; whether the region fits a particular
    image is checked at use time.
    """

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self) -> None:
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not isinstance(v, (int, np.integer)):
                raise DegenerateRegion(f"region coordinates must be integers, got {v!r}")
        if self.x1 < 0 or self.y1 < 0:
            raise DegenerateRegion(f"region origin must be non-negative: {self.as_tuple()}")
        if self.x2 <= self.x1 or self.y2 <= self.y1:
            raise DegenerateRegion(f"region must have positive extent: {self.as_tuple()}")

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (int(self.x1), int(self.y1), int(self.x2), int(self.y2))

    def fits(self, image: "RasterImage | Bounds") -> bool:
        return self.x2 <= image.width and self.y2 <= image.height

    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def contains(self, other: "Region") -> bool:
        return (
            self.x1 <= other.x1
            and self.y1 <= other.y1
            and self.x2 >= other.x2
            and self.y2 >= other.y2
        )


class RasterImage:
    """Immutable 8-bit grayscale raster.

    Pixels are stored row-major as a read-only ``(height, width)`` uint8
    array.  Images compare equal when their pixel grids are identical.
    """

    __slots__ = ("_data",)

    def __init__(self, data) -> None:
        arr = np.array(data, dtype=np.uint8, copy=True)
        if arr.ndim != 2:
            raise ImagingError(f"expected a 2-D grayscale array, got ndim={arr.ndim}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ImagingError(f"raster must be at least 1x1, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "_data", arr)

    @classmethod
    def from_flat(cls, width: int, height: int, values) -> "RasterImage":
        flat = np.asarray(values, dtype=np.uint8)
        if flat.ndim != 1 or flat.size != width * height:
            raise ImagingError(
                f"flat pixel buffer must hold width*height={width * height} values, got {flat.size}"
            )
        return cls(flat.reshape(height, width))

    @property
    def width(self) -> int:
        return int(self._data.shape[1])

    @property
    def height(self) -> int:
        return int(self._data.shape[0])

    @property
    def pixels(self) -> np.ndarray:
        """Read-only (height, width) view of the raster."""
        return self._data

    def tobytes(self) -> bytes:
        return self._data.tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self._data.shape == other._data.shape and bool(
            np.array_equal(self._data, other._data)
        )

    def __hash__(self):
        return hash((self._data.shape, self._data.tobytes()))

    def __repr__(self) -> str:
        return f"RasterImage({self.width}x{self.height})"


@dataclass(frozen=True)
class DualView:
    """Side-by-side pair produced by the mirror tool.

    ``original`` is the padded crop around the requested region and
    ``mirrored`` is the reflected crop of the contralateral region, flipped
    so that anatomy lines up column for column.  Both views always share
    the same dimensions.
    """

    original: RasterImage
    mirrored: RasterImage
    source_region: Region
    mirror_region: Region

    def __post_init__(self) -> None:
        if (self.original.width, self.original.height) != (
            self.mirrored.width,
            self.mirrored.height,
        ):
            raise ImagingError("dual view halves must have identical dimensions")

    def difference(self) -> np.ndarray:
        """Signed pixel difference original - mirrored as int16."""
        return self.original.pixels.astype(np.int16) - self.mirrored.pixels.astype(np.int16)


def crop(image: RasterImage, region: Region) -> RasterImage:
    """Extract ``region`` from ``image``; output pixel (i, j) is input (x1+i, y1+j)."""
    if not region.fits(image):
        raise RegionOutOfBounds(
            f"region {region.as_tuple()} exceeds image bounds {image.width}x{image.height}"
        )
    return RasterImage(image.pixels[region.y1 : region.y2, region.x1 : region.x2])


def pad_region(region: Region, factor: float, image: RasterImage | Bounds) -> Region:
    """Scale ``region`` about its center by ``factor`` and clamp to the image.

    Fractional edges round outward (floor on minima, ceil on maxima) so the
    padded region never loses pixels of the original, and ``factor`` 1.0 is
    the identity.
    """
    if factor < 1.0:
        raise ImagingError(f"pad factor must be >= 1.0, got {factor}")
    if not region.fits(image):
        raise RegionOutOfBounds(
            f"region {region.as_tuple()} exceeds image bounds {image.width}x{image.height}"
        )
    cx, cy = region.center()
    half_w = region.width * factor / 2.0
    half_h = region.height * factor / 2.0
    x1 = max(0, math.floor(cx - half_w))
    y1 = max(0, math.floor(cy - half_h))
    x2 = min(image.width, math.ceil(cx + half_w))
    y2 = min(image.height, math.ceil(cy + half_h))
    return Region(x1, y1, x2, y2)


def mirror_region(region: Region, width: int) -> Region:
    """Reflect a region across the vertical midline of a raster of ``width``.

    [x1, x2) maps to [width - x2, width - x1); the y span is unchanged.
    Applying the reflection twice returns the original region exactly.
    """
    if region.x2 > width:
        raise RegionOutOfBounds(
            f"region {region.as_tuple()} does not fit a raster of width {width}"
        )
    return Region(width - region.x2, region.y1, width - region.x1, region.y2)


def mirror_pixels(image: RasterImage) -> RasterImage:
    """Flip a raster left-right: output column c is input column width-1-c."""
    return RasterImage(np.fliplr(image.pixels))


def zoom_in(
    image: RasterImage,
    region: Region,
    factor: float = 1.5,
    min_side: int = 0,
) -> RasterImage:
    """Magnified look at a region: padded crop, optionally upscaled.

    When ``min_side`` is positive and the crop's shorter side falls below
    it, the crop is enlarged by nearest-neighbor resampling; output pixel
    (i, j) reads source pixel (floor(i*src_h/out_h), floor(j*src_w/out_w)).
    ``min_side`` 0 disables upscaling.
    """
    padded = pad_region(region, factor, image)
    view = crop(image, padded)
    if min_side <= 0:
        return view
    short = min(view.width, view.height)
    if short >= min_side:
        return view
    out_w = -(-view.width * min_side // short)  # ceil division
    out_h = -(-view.height * min_side // short)
    rows = (np.arange(out_h) * view.height) // out_h
    cols = (np.arange(out_w) * view.width) // out_w
    return RasterImage(view.pixels[np.ix_(rows, cols)])


def mirror_in(image: RasterImage, region: Region, factor: float = 1.5) -> DualView:
    """Build the symmetry-comparison pair for a region.

    The requested region is padded and cropped as-is; its reflection across
    the midline is cropped and flipped so both views present the anatomy in
    the same orientation.  Because padding is symmetric about the region
    center and clamping commutes with reflection, the two crops always come
    out the same size; the defensive trim below only fires if that ever
    stops holding.
    """
    src = pad_region(region, factor, image)
    ref = mirror_region(src, image.width)
    if (src.width, src.height) != (ref.width, ref.height):
        w = min(src.width, ref.width)
        h = min(src.height, ref.height)
        src = Region(src.x1, src.y1, src.x1 + w, src.y1 + h)
        ref = Region(ref.x1, ref.y1, ref.x1 + w, ref.y1 + h)
    original = crop(image, src)
    mirrored = mirror_pixels(crop(image, ref))
    return DualView(original=original, mirrored=mirrored, source_region=src, mirror_region=ref)
