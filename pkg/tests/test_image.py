from types import SimpleNamespace

import numpy as np
import pytest

from vizmark.errors import FormatError, GeometryError, ShapeError
from vizmark.image import (
    GREEN_OUTLINE,
    OverlayStyle,
    crop_to,
    from_uint8,
    load_image,
    pad_to_even,
    render_overlay,
    save_image,
    to_uint8,
    validate_image,
)


def region(bbox, contour, rid=0):
    return SimpleNamespace(id=rid, bbox=bbox, contour=contour, area=0)


def test_load_white_and_black_png(tmp_path):
    p = tmp_path / "w.png"
    save_image(np.ones((2, 2, 3)), str(p))
    assert np.array_equal(load_image(str(p)), np.ones((2, 2, 3)))
    save_image(np.zeros((2, 2, 3)), str(p))
    assert np.array_equal(load_image(str(p)), np.zeros((2, 2, 3)))


def test_load_gray_midpoint_value(tmp_path):
    p = tmp_path / "g.png"
    save_image(np.full((2, 2, 1), 128 / 255.0), str(p))
    img = load_image(str(p))
    assert img.shape == (2, 2, 1)
    assert img[0, 0, 0] == pytest.approx(128 / 255.0, abs=1e-12)


def test_png_roundtrip_within_quantization(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.random((16, 12, 3))
    p = tmp_path / "r.png"
    save_image(img, str(p))
    back = load_image(str(p))
    assert np.abs(back - img).max() <= 1.0 / 255.0 + 1e-12


def test_jpeg_is_lossy_but_bounded(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.random((32, 32, 3))
    p = tmp_path / "r.jpg"
    save_image(img, str(p), jpeg_quality=100)
    back = load_image(str(p))
    assert back.shape == img.shape
    assert np.abs(back - img).mean() > 0.0
    assert back.min() >= 0.0 and back.max() <= 1.0


def test_jpeg_quality_out_of_range(tmp_path):
    with pytest.raises(ValueError):
        save_image(np.ones((2, 2, 3)), str(tmp_path / "x.jpg"), jpeg_quality=0)


def test_load_rejects_non_image(tmp_path):
    p = tmp_path / "junk.png"
    p.write_bytes(b"this is not an image at all")
    with pytest.raises(FormatError):
        load_image(str(p))


def test_save_rejects_unknown_extension(tmp_path):
    with pytest.raises(FormatError):
        save_image(np.ones((2, 2, 3)), str(tmp_path / "x.bmp"))


def test_validate_image_contract():
    with pytest.raises(ShapeError):
        validate_image(np.zeros((4, 4)))
    with pytest.raises(ShapeError):
        validate_image(np.zeros((4, 4, 2)))
    with pytest.raises(ValueError):
        validate_image(np.full((2, 2, 3), 1.5))
    with pytest.raises(ShapeError):
        validate_image(np.zeros((3, 4, 3)), require_even=True)


def test_uint8_roundtrip():
    rng = np.random.default_rng(2)
    img = rng.random((8, 8, 3))
    assert np.abs(from_uint8(to_uint8(img)) - img).max() <= 0.5 / 255.0 + 1e-12


def test_pad_to_even_and_crop_back():
    rng = np.random.default_rng(3)
    img = rng.random((5, 7, 3))
    padded, size = pad_to_even(img)
    assert padded.shape == (6, 8, 3)
    assert np.array_equal(padded[5, :7], img[4])  # replicated bottom edge
    assert np.array_equal(crop_to(padded, size), img)
    even = rng.random((4, 4, 1))
    same, size2 = pad_to_even(even)
    assert same.shape == (4, 4, 1) and size2 == (4, 4)


def test_overlay_empty_regions_is_identity():
    rng = np.random.default_rng(4)
    base = rng.random((12, 12, 3))
    assert np.array_equal(render_overlay(base, []), base)


def square_contour(x0, y0, side):
    # clockwise boundary loop of a filled square, first point repeated last
    pts = []
    for x in range(x0, x0 + side):
        pts.append((x, y0))
    for y in range(y0 + 1, y0 + side):
        pts.append((x0 + side - 1, y))
    for x in range(x0 + side - 2, x0 - 1, -1):
        pts.append((x, y0 + side - 1))
    for y in range(y0 + side - 2, y0, -1):
        pts.append((x0, y))
    pts.append(pts[0])
    return pts


def test_overlay_4x4_outline_touches_exactly_12_pixels():
    base = np.zeros((12, 12, 3))
    contour = square_contour(3, 4, 4)
    reg = region((3, 4, 7, 8), contour)
    style = OverlayStyle(contour_color=(0.0, 1.0, 0.0), line_width=1, fill_alpha=0.0)
    out = render_overlay(base, [reg], style)
    changed = np.argwhere((out != base).any(axis=2))
    assert len(changed) == 12
    for y, x in changed:
        assert np.array_equal(out[y, x], [0.0, 1.0, 0.0])


def test_overlay_full_fill_replaces_interior():
    base = np.full((10, 10, 3), 0.5)
    reg = region((2, 2, 6, 6), square_contour(2, 2, 4))
    style = OverlayStyle(contour_color=(0.0, 1.0, 0.0), line_width=1, fill_alpha=1.0)
    out = render_overlay(base, [reg], style)
    assert np.array_equal(out[3, 3], [0.0, 1.0, 0.0])
    assert np.array_equal(out[2:6, 2:6].reshape(-1, 3).min(axis=0), [0.0, 1.0, 0.0])


def test_overlay_never_writes_outside_dilated_bboxes():
    rng = np.random.default_rng(5)
    base = rng.random((24, 24, 3))
    reg = region((8, 8, 12, 12), square_contour(8, 8, 4))
    out = render_overlay(base, [reg], GREEN_OUTLINE)
    lw = GREEN_OUTLINE.line_width
    outside = np.ones((24, 24), dtype=bool)
    outside[8 - lw : 12 + lw, 8 - lw : 12 + lw] = False
    assert np.array_equal(out[outside], base[outside])


def test_overlay_out_of_bounds_region_rejected():
    base = np.zeros((8, 8, 3))
    reg = region((5, 5, 10, 10), [(5, 5), (5, 5)])
    with pytest.raises(GeometryError):
        render_overlay(base, [reg])


def test_overlay_style_validation():
    with pytest.raises(ValueError):
        OverlayStyle(line_width=0)
    with pytest.raises(ValueError):
        OverlayStyle(fill_alpha=1.5)
