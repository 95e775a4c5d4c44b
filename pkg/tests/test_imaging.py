import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panodiag.imaging import (
    Bounds,
    DegenerateRegion,
    DualView,
    ImagingError,
    RasterImage,
    Region,
    RegionOutOfBounds,
    crop,
    mirror_in,
    mirror_pixels,
    mirror_region,
    pad_region,
    zoom_in,
)


def test_region_validates_coordinates():
    with pytest.raises(DegenerateRegion):
        Region(5, 0, 5, 10)  # zero width
    with pytest.raises(DegenerateRegion):
        Region(-1, 0, 4, 4)
    with pytest.raises(DegenerateRegion):
        Region(0.5, 0, 4, 4)  # type: ignore[arg-type]


def test_region_accessors():
    r = Region(2, 3, 10, 7)
    assert (r.width, r.height) == (8, 4)
    assert r.center() == (6.0, 5.0)
    assert r.as_tuple() == (2, 3, 10, 7)
    assert r.contains(Region(3, 4, 9, 6))
    assert not r.contains(Region(0, 0, 4, 4))


def test_raster_is_immutable_and_hashable(flat_image):
    with pytest.raises(ValueError):
        flat_image.pixels[0, 0] = 9
    same = RasterImage(np.full((32, 64), 128, dtype=np.uint8))
    assert flat_image == same
    assert hash(flat_image) == hash(same)


def test_raster_rejects_bad_shapes():
    with pytest.raises(ImagingError):
        RasterImage(np.zeros((2, 2, 3), dtype=np.uint8))
    with pytest.raises(ImagingError):
        RasterImage(np.zeros((0, 4), dtype=np.uint8))


def test_from_flat_round_trip(gradient_image):
    rebuilt = RasterImage.from_flat(
        gradient_image.width, gradient_image.height, gradient_image.pixels.ravel()
    )
    assert rebuilt == gradient_image


def test_crop_exact_window(gradient_image):
    region = Region(3, 2, 8, 6)
    view = crop(gradient_image, region)
    assert (view.width, view.height) == (5, 4)
    assert np.array_equal(view.pixels, gradient_image.pixels[2:6, 3:8])


def test_crop_out_of_bounds(flat_image):
    with pytest.raises(RegionOutOfBounds):
        crop(flat_image, Region(60, 0, 70, 10))


def test_pad_region_identity_at_factor_one(flat_image):
    region = Region(10, 10, 20, 20)
    assert pad_region(region, 1.0, flat_image) == region


def test_pad_region_known_expansion(flat_image):
    # 10x10 at center (15, 15), factor 1.5 -> half side 7.5 -> [7.5, 22.5)
    # floored/ceiled outward to [7, 23)
    assert pad_region(Region(10, 10, 20, 20), 1.5, flat_image) == Region(7, 7, 23, 23)


def test_pad_region_clamps_to_edges(flat_image):
    padded = pad_region(Region(0, 0, 10, 10), 2.0, flat_image)
    assert padded == Region(0, 0, 15, 15)


def test_pad_region_rejects_shrink(flat_image):
    with pytest.raises(ImagingError):
        pad_region(Region(0, 0, 4, 4), 0.9, flat_image)


def test_pad_region_accepts_bare_bounds():
    padded = pad_region(Region(10, 10, 20, 20), 1.5, Bounds(64, 32))
    assert padded == Region(7, 7, 23, 23)


def test_bounds_validation():
    with pytest.raises(ImagingError):
        Bounds(0, 5)


def test_mirror_region_known_values():
    # width 100: [10, 30) -> [70, 90)
    assert mirror_region(Region(10, 5, 30, 15), 100) == Region(70, 5, 90, 15)


def test_mirror_region_rejects_overflow():
    with pytest.raises(RegionOutOfBounds):
        mirror_region(Region(0, 0, 101, 10), 100)


def test_mirror_pixels_flips_columns(gradient_image):
    flipped = mirror_pixels(gradient_image)
    assert np.array_equal(flipped.pixels, gradient_image.pixels[:, ::-1])


def test_zoom_in_no_upscale_below_min_side(gradient_image):
    region = Region(4, 4, 12, 12)
    view = zoom_in(gradient_image, region, factor=1.0, min_side=0)
    assert view == crop(gradient_image, region)


def test_zoom_in_upscales_with_ceil_division(gradient_image):
    # 8x8 crop, min_side 20 -> scale 20/8 -> output 20x20 exactly
    view = zoom_in(gradient_image, Region(4, 4, 12, 12), factor=1.0, min_side=20)
    assert (view.width, view.height) == (20, 20)
    # nearest-neighbor: output (i, j) reads source (i*8//20, j*8//20)
    src = crop(gradient_image, Region(4, 4, 12, 12)).pixels
    rows = (np.arange(20) * 8) // 20
    cols = (np.arange(20) * 8) // 20
    assert np.array_equal(view.pixels, src[np.ix_(rows, cols)])


def test_zoom_in_non_square_keeps_aspect_by_ceil(gradient_image):
    # 10x5 crop, min_side 8: scale on the short side -> 16x8
    view = zoom_in(gradient_image, Region(0, 0, 10, 5), factor=1.0, min_side=8)
    assert (view.width, view.height) == (16, 8)


def test_mirror_in_shapes_and_regions(gradient_image):
    region = Region(2, 3, 12, 9)
    dual = mirror_in(gradient_image, region, factor=1.0)
    assert isinstance(dual, DualView)
    assert dual.source_region == region
    assert dual.mirror_region == mirror_region(region, gradient_image.width)
    assert (dual.original.width, dual.original.height) == (10, 6)
    assert dual.difference().dtype == np.int16


def test_mirror_in_on_symmetric_image_is_zero():
    left = np.arange(16 * 8, dtype=np.uint8).reshape(8, 16)
    image = RasterImage(np.concatenate([left, left[:, ::-1]], axis=1))
    dual = mirror_in(image, Region(2, 1, 10, 7), factor=1.5)
    assert int(np.abs(dual.difference()).max()) == 0


def test_mirror_in_midline_region_self_compares(flat_image):
    # a region straddling the midline mirrors onto itself
    dual = mirror_in(flat_image, Region(28, 4, 36, 12), factor=1.0)
    assert dual.source_region == Region(28, 4, 36, 12)
    assert dual.mirror_region == Region(28, 4, 36, 12)
    assert int(np.abs(dual.difference()).max()) == 0


# --- property sweeps ---------------------------------------------------------


@st.composite
def image_and_region(draw):
    width = draw(st.integers(4, 48))
    height = draw(st.integers(4, 40))
    seed = draw(st.integers(0, 2**31 - 1))
    pixels = np.random.default_rng(seed).integers(0, 256, size=(height, width), dtype=np.uint8)
    x1 = draw(st.integers(0, width - 2))
    x2 = draw(st.integers(x1 + 1, width))
    y1 = draw(st.integers(0, height - 2))
    y2 = draw(st.integers(y1 + 1, height))
    return RasterImage(pixels), Region(x1, y1, x2, y2)


@settings(max_examples=60, deadline=None)
@given(image_and_region())
def test_mirror_region_involution_property(pair):
    image, region = pair
    assert mirror_region(mirror_region(region, image.width), image.width) == region


@settings(max_examples=60, deadline=None)
@given(image_and_region())
def test_mirror_pixels_involution_property(pair):
    image, _ = pair
    assert mirror_pixels(mirror_pixels(image)) == image


@settings(max_examples=60, deadline=None)
@given(image_and_region(), st.floats(1.0, 3.0))
def test_pad_region_stays_inside_and_covers(pair, factor):
    image, region = pair
    padded = pad_region(region, factor, image)
    assert padded.fits(image)
    assert padded.contains(region)


@settings(max_examples=60, deadline=None)
@given(image_and_region())
def test_mirror_in_halves_always_same_size(pair):
    image, region = pair
    dual = mirror_in(image, region, factor=1.5)
    assert (dual.original.width, dual.original.height) == (
        dual.mirrored.width,
        dual.mirrored.height,
    )
