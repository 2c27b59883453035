import json

import numpy as np
import pytest

from vizmark.detect import (
    DetectionConfig,
    TamperMask,
    extract_regions,
    load_mask,
    regions_to_json,
    residual_mask,
    save_mask,
    save_regions,
)
from vizmark.errors import ShapeError


def flood_fill_components(bits, connectivity=8):
    # independent stack-based labeling oracle
    h, w = bits.shape
    seen = np.zeros_like(bits, dtype=bool)
    if connectivity == 8:
        nbrs = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    else:
        nbrs = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    comps = []
    for y in range(h):
        for x in range(w):
            if not bits[y, x] or seen[y, x]:
                continue
            stack = [(y, x)]
            seen[y, x] = True
            pix = []
            while stack:
                cy, cx = stack.pop()
                pix.append((cy, cx))
                for dy, dx in nbrs:
                    ny, nx = cy + dy, cx + dx
                    if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        stack.append((ny, nx))
            comps.append(pix)
    return comps


def test_residual_mask_threshold_per_channel_max():
    original = np.zeros((2, 2, 3))
    revealed = np.zeros((2, 2, 3))
    revealed[0, 0] = [0.3, 0.0, 0.0]   # max diff 0.3 -> flagged
    revealed[0, 1] = [0.1, 0.19, 0.0]  # max diff 0.19 -> clean at tau 0.2
    revealed[1, 0] = [0.2, 0.0, 0.0]   # boundary: >= tau flags
    mask = residual_mask(original, revealed, DetectionConfig(min_area=0))
    assert mask.bits.tolist() == [[True, False], [True, False]]


def test_residual_mask_identity_and_inversion():
    rng = np.random.default_rng(0)
    m = rng.random((8, 8, 3))
    assert not residual_mask(m, m).bits.any()
    cb = np.zeros((8, 8, 3))
    cb[::2] = 1.0
    assert residual_mask(cb, 1.0 - cb).bits.all()


def test_residual_mask_matches_brute_force_at_multiple_taus():
    rng = np.random.default_rng(1)
    for tau in (0.1, 0.2, 0.5):
        cfg = DetectionConfig(tau=tau)
        for _ in range(30):
            a = rng.random((6, 6, 3))
            b = rng.random((6, 6, 3))
            got = residual_mask(a, b, cfg).bits
            for y in range(6):
                for x in range(6):
                    d = max(abs(a[y, x, c] - b[y, x, c]) for c in range(3))
                    assert got[y, x] == (d >= tau)


def test_tau_monotonicity():
    rng = np.random.default_rng(2)
    a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    prev = None
    for tau in (0.05, 0.1, 0.2, 0.4, 0.8):
        bits = residual_mask(a, b, DetectionConfig(tau=tau)).bits
        if prev is not None:
            assert not (bits & ~prev).any()  # raising tau never adds bits
        prev = bits


def test_morphology_removes_salt_noise():
    bits = np.zeros((16, 16), dtype=bool)
    bits[3, 3] = True  # isolated single pixel
    bits[8:13, 8:13] = True
    a = np.zeros((16, 16, 3))
    b = a.copy()
    b[bits] = 1.0
    cfg = DetectionConfig(morphology="open-close", morph_radius=1, min_area=0)
    cleaned = residual_mask(a, b, cfg).bits
    assert not cleaned[3, 3]
    assert cleaned[9:12, 9:12].all()


def test_residual_mask_shape_mismatch():
    with pytest.raises(ShapeError):
        residual_mask(np.zeros((4, 4, 3)), np.zeros((4, 6, 3)))


def test_extract_regions_empty_mask():
    assert extract_regions(TamperMask(np.zeros((8, 8), dtype=bool))) == []


def test_extract_regions_min_area_filter():
    bits = np.zeros((24, 24), dtype=bool)
    bits[2:12, 2:12] = True   # 100 px
    bits[18:21, 18:21] = True  # 9 px, below min_area=16
    regions = extract_regions(TamperMask(bits), DetectionConfig(min_area=16))
    assert len(regions) == 1
    assert regions[0].area == 100
    assert regions[0].bbox == (2, 2, 12, 12)


def test_extract_regions_matches_flood_fill_oracle():
    rng = np.random.default_rng(3)
    for conn in (4, 8):
        cfg = DetectionConfig(min_area=1, connectivity=conn)
        for _ in range(25):
            bits = rng.random((12, 12)) < 0.35
            regions = extract_regions(TamperMask(bits), cfg)
            oracle = flood_fill_components(bits, conn)
            assert sorted(r.area for r in regions) == sorted(len(c) for c in oracle)
            assert [r.id for r in regions] == list(range(len(regions)))
            areas = [r.area for r in regions]
            assert areas == sorted(areas, reverse=True)


def test_contour_of_filled_square_hand_oracle():
    bits = np.zeros((10, 10), dtype=bool)
    bits[3:7, 2:6] = True
    regions = extract_regions(TamperMask(bits), DetectionConfig(min_area=1))
    contour = regions[0].contour
    assert contour[0] == contour[-1] == (2, 3)  # topmost-leftmost start
    unique = set(contour)
    assert len(unique) == 12  # 4x4 square boundary ring
    expected = {
        (x, y)
        for y in range(3, 7)
        for x in range(2, 6)
        if y in (3, 6) or x in (2, 5)
    }
    assert unique == expected
    # clockwise: the walk leaves the start heading east
    assert contour[1] == (3, 3)
    x0, y0, x1, y1 = regions[0].bbox
    assert all(x0 <= x < x1 and y0 <= y < y1 for x, y in contour)


def test_contour_single_pixel_region():
    bits = np.zeros((5, 5), dtype=bool)
    bits[2, 3] = True
    regions = extract_regions(TamperMask(bits), DetectionConfig(min_area=1))
    assert regions[0].contour == [(3, 2), (3, 2)]
    assert regions[0].area == 1


def test_region_pixels_subset_of_mask():
    rng = np.random.default_rng(4)
    bits = rng.random((16, 16)) < 0.3
    regions = extract_regions(TamperMask(bits), DetectionConfig(min_area=1))
    total = sum(r.area for r in regions)
    assert total == int(bits.sum())
    for r in regions:
        for x, y in r.contour:
            assert bits[y, x]


def test_mask_and_regions_roundtrip_files(tmp_path):
    bits = np.zeros((8, 8), dtype=bool)
    bits[1:4, 2:6] = True
    mask = TamperMask(bits)
    mp = tmp_path / "m.png"
    save_mask(mask, str(mp))
    assert np.array_equal(load_mask(str(mp)).bits, bits)
    regions = extract_regions(mask, DetectionConfig(min_area=1))
    rp = tmp_path / "r.json"
    save_regions(regions, str(rp))
    data = json.loads(rp.read_text())
    assert data == regions_to_json(regions)
    assert data[0]["area"] == 12
    assert {"id", "bbox", "area", "contour"} == set(data[0].keys())


def test_detection_config_validation():
    with pytest.raises(ValueError):
        DetectionConfig(tau=0.0)
    with pytest.raises(ValueError):
        DetectionConfig(tau=1.0)
    with pytest.raises(ValueError):
        DetectionConfig(connectivity=6)
    with pytest.raises(ValueError):
        DetectionConfig(morphology="dilate")
    with pytest.raises(ValueError):
        DetectionConfig(min_area=-1)
