"""Restoration metrics: IOUs, saturation W1, edge variation, MSE/PSNR."""

import numpy as np
import pytest

from diffrestore import (
    BinaryMask,
    FileFormatError,
    ImageTensor,
    ParsingMap,
    contour_iou,
    edge_variation,
    feature_iou,
    histogram_w1,
    mask_iou,
    mse_psnr,
    read_histogram,
    saturation_distance,
    saturation_histogram,
    write_histogram,
)


def T(arr):
    return ImageTensor(np.asarray(arr, dtype=np.float64))


def M(rows):
    return BinaryMask(np.array(rows, dtype=np.uint8))


# ---------------------------------------------------------------------------
# IOU family


def test_mask_iou_examples():
    a = M([[1, 1], [0, 0]])
    b = M([[1, 0], [1, 0]])
    # intersection 1, union 3
    assert abs(mask_iou(a, b) - 1.0 / 3.0) < 1e-15
    assert mask_iou(a, a) == 1.0


def test_mask_iou_disjoint_and_empty():
    a = M([[1, 0], [0, 0]])
    b = M([[0, 0], [0, 1]])
    assert mask_iou(a, b) == 0.0
    empty = M([[0, 0], [0, 0]])
    assert mask_iou(empty, empty) == 1.0  # both empty counts as agreement


def test_mask_iou_symmetry_and_bounds():
    rng = np.random.default_rng(1)
    for _ in range(10):
        a = BinaryMask((rng.random((6, 6)) < 0.4).astype(np.uint8))
        b = BinaryMask((rng.random((6, 6)) < 0.4).astype(np.uint8))
        v = mask_iou(a, b)
        assert v == mask_iou(b, a)
        assert 0.0 <= v <= 1.0


def test_contour_iou_nonbackground():
    pa = ParsingMap(np.array([[0, 1], [4, 0]], dtype=np.uint8))
    pb = ParsingMap(np.array([[0, 17], [0, 0]], dtype=np.uint8))
    # nonzero regions {01,10} vs {01}: inter 1, union 2
    assert abs(contour_iou(pa, pb) - 0.5) < 1e-15


def test_feature_iou_mean_over_labels():
    base = np.zeros((4, 4), dtype=np.uint8)
    pa = base.copy()
    pb = base.copy()
    pa[0, 0] = 4  # one feature label disagrees
    # label 4: IOU 0 (one side empty); other 7 labels: both empty -> 1
    want = (0.0 + 7 * 1.0) / 8.0
    assert abs(feature_iou(ParsingMap(pa), ParsingMap(pb)) - want) < 1e-15
    assert feature_iou(ParsingMap(pa), ParsingMap(pa)) == 1.0


# ---------------------------------------------------------------------------
# saturation histogram distance


def test_histogram_w1_identical_is_zero():
    rng = np.random.default_rng(2)
    h = rng.random(64)
    assert histogram_w1(h, h.copy()) == 0.0


def test_histogram_w1_extreme_point_masses():
    # all mass in bin 0 vs all in bin 63: CDF gap of 1 across 63 interior
    # boundaries, normalized by 64 bins -> 63/64
    p = np.zeros(64)
    q = np.zeros(64)
    p[0] = 1.0
    q[63] = 1.0
    assert abs(histogram_w1(p, q) - 63.0 / 64.0) < 1e-15
    assert histogram_w1(p, q) == 0.984375


def test_histogram_w1_adjacent_bins():
    p = np.zeros(64)
    q = np.zeros(64)
    p[10] = 1.0
    q[11] = 1.0
    assert abs(histogram_w1(p, q) - 1.0 / 64.0) < 1e-15


def test_histogram_w1_metric_properties():
    rng = np.random.default_rng(3)
    for _ in range(10):
        p = rng.random(64)
        q = rng.random(64)
        r = rng.random(64)
        assert histogram_w1(p, q) == histogram_w1(q, p)
        assert histogram_w1(p, q) <= histogram_w1(p, r) + histogram_w1(r, q) + 1e-12
    with pytest.raises(ValueError):
        histogram_w1(np.zeros(64), np.ones(64))


def test_histogram_w1_scale_invariance():
    rng = np.random.default_rng(4)
    p = rng.random(64)
    q = rng.random(64)
    assert abs(histogram_w1(p, q) - histogram_w1(5.0 * p, 0.25 * q)) < 1e-15


def test_saturation_histogram_mass_one():
    rng = np.random.default_rng(5)
    img = T(rng.uniform(-1, 1, size=(3, 8, 8)))
    h = saturation_histogram(img)
    assert h.shape == (64,)
    assert abs(h.sum() - 1.0) < 1e-12
    assert np.all(h >= 0.0)


def test_saturation_histogram_gray_in_first_bin():
    img = T(np.full((3, 4, 4), 0.2))
    h = saturation_histogram(img)
    assert h[0] == 1.0


def test_saturation_distance_self_zero():
    rng = np.random.default_rng(6)
    img = T(rng.uniform(-1, 1, size=(3, 8, 8)))
    assert saturation_distance(img, saturation_histogram(img)) == 0.0


# ---------------------------------------------------------------------------
# edge variation


def test_edge_variation_alternating_stripes():
    # columns 0,1,0,1: horizontal diffs are 1,1,1,0 per row
    x = T(np.tile(np.array([0.0, 1.0, 0.0, 1.0]), (4, 1))[None, :, :])
    region = M(np.ones((4, 4)))
    # vertical diffs are zero; field rows are [1,1,1,0]
    field = np.tile([1.0, 1.0, 1.0, 0.0], (4, 1))
    want = field.std()
    assert abs(edge_variation(x, region) - want) < 1e-12


def test_edge_variation_constant_zero():
    x = T(np.full((3, 5, 5), -0.3))
    region = M(np.ones((5, 5)))
    assert edge_variation(x, region) == 0.0


def test_edge_variation_empty_region():
    rng = np.random.default_rng(7)
    x = T(rng.normal(size=(3, 5, 5)))
    assert edge_variation(x, M(np.zeros((5, 5)))) == 0.0


def test_edge_variation_region_restriction():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(1, 6, 6))
    region = np.zeros((6, 6), dtype=np.uint8)
    region[1:3, 1:5] = 1
    got = edge_variation(T(x), BinaryMask(region))
    # brute: field over all-ones mask, then std of the region's values
    vals = []
    for i in range(6):
        for j in range(6):
            if not region[i, j]:
                continue
            v = 0.0
            if j + 1 < 6:
                v += abs(x[0, i, j] - x[0, i, j + 1])
            if i + 1 < 6:
                v += abs(x[0, i, j] - x[0, i + 1, j])
            vals.append(v)
    assert abs(got - np.std(vals)) < 1e-12


def test_edge_variation_mask_independent_of_region_shape():
    # the field is computed on the full image; the region only selects values
    x = T(np.tile(np.array([0.0, 1.0, 0.0, 1.0]), (4, 1))[None, :, :])
    left = np.zeros((4, 4), dtype=np.uint8)
    left[:, :2] = 1
    got = edge_variation(x, BinaryMask(left))
    assert abs(got - 0.0) < 1e-12  # both selected columns have diff 1


# ---------------------------------------------------------------------------
# MSE / PSNR


def test_mse_psnr_example():
    # constant error 0.2: mse 0.04, psnr = 10 log10(4/0.04) = 20 dB
    a = T(np.zeros((1, 4, 4)))
    b = T(np.full((1, 4, 4), 0.2))
    mse, psnr = mse_psnr(a, b)
    assert abs(mse - 0.04) < 1e-15
    assert abs(psnr - 20.0) < 1e-12


def test_mse_psnr_identical():
    a = T(np.full((3, 2, 2), 0.5))
    mse, psnr = mse_psnr(a, a)
    assert mse == 0.0
    assert psnr == float("inf")


def test_mse_psnr_peak_range():
    # full-scale error (-1 vs 1): mse 4, psnr 0
    a = T(np.full((1, 2, 2), -1.0))
    b = T(np.full((1, 2, 2), 1.0))
    mse, psnr = mse_psnr(a, b)
    assert mse == 4.0
    assert abs(psnr) < 1e-12


def test_mse_psnr_region():
    rng = np.random.default_rng(9)
    a = rng.normal(size=(3, 5, 5))
    b = rng.normal(size=(3, 5, 5))
    region = (rng.random((5, 5)) < 0.5).astype(np.uint8)
    mse, _ = mse_psnr(T(a), T(b), BinaryMask(region))
    sel = region == 1
    want = np.mean((a - b)[:, sel] ** 2)
    assert abs(mse - want) < 1e-12


def test_mse_psnr_empty_region_sentinel():
    a = T(np.zeros((1, 3, 3)))
    b = T(np.ones((1, 3, 3)))
    mse, psnr = mse_psnr(a, b, M(np.zeros((3, 3))))
    assert mse == 0.0 and psnr == float("inf")


def test_mse_psnr_shape_check():
    with pytest.raises(ValueError):
        mse_psnr(T(np.zeros((1, 2, 2))), T(np.zeros((1, 2, 3))))


# ---------------------------------------------------------------------------
# SSH1 histogram files


def test_histogram_file_roundtrip(tmp_path):
    rng = np.random.default_rng(10)
    h = rng.random(64)
    h /= h.sum()
    p = tmp_path / "ref.ssh1"
    write_histogram(h, p)
    back = read_histogram(p)
    assert back.shape == (64,)
    assert np.max(np.abs(back - h)) < 1e-7  # f32 payload


def test_histogram_file_layout(tmp_path):
    p = tmp_path / "h.ssh1"
    write_histogram(np.zeros(64), p)
    raw = p.read_bytes()
    assert raw[:4] == b"SSH1"
    assert len(raw) == 4 + 64 * 4


def test_histogram_file_errors(tmp_path):
    p = tmp_path / "bad.ssh1"
    p.write_bytes(b"NOPE" + b"\x00" * 256)
    with pytest.raises(FileFormatError, match="magic"):
        read_histogram(p)
    p2 = tmp_path / "short.ssh1"
    p2.write_bytes(b"SSH1" + b"\x00" * 100)
    with pytest.raises(FileFormatError, match="short"):
        read_histogram(p2)
    with pytest.raises(FileFormatError):
        write_histogram(np.zeros(32), tmp_path / "n.ssh1")
