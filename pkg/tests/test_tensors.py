"""Image / mask / tensor container and file-format tests.

Pixel-mapping oracles are computed from the integer formula 2*p/255 - 1
directly in the test so the package can't grade its own homework.
"""

import struct

import numpy as np
import pytest
from PIL import Image

from diffrestore import (
    BinaryMask,
    FileFormatError,
    ImageTensor,
    NumericError,
    ParsingMap,
    load_image,
    load_mask,
    load_parsing,
    load_tensor,
    read_ssdt,
    rgb_to_saturation,
    save_image,
    save_mask,
    save_parsing,
    save_tensor,
    write_ssdt,
)


def write_png(path, arr, mode):
    Image.fromarray(arr, mode=mode).save(path)


# ---------------------------------------------------------------------------
# PNG <-> tensor mapping


def test_image_endpoints(tmp_path):
    p = tmp_path / "g.png"
    write_png(p, np.array([[0, 255]], dtype=np.uint8), "L")
    img = load_image(p)
    assert img.data.shape == (1, 1, 2)
    assert img.data[0, 0, 0] == -1.0
    assert img.data[0, 0, 1] == 1.0


def test_image_midpoint(tmp_path):
    # 128 maps to 2*128/255 - 1 = 1/255, not exactly zero
    p = tmp_path / "g.png"
    write_png(p, np.array([[128]], dtype=np.uint8), "L")
    img = load_image(p)
    assert abs(img.data[0, 0, 0] - 1.0 / 255.0) < 1e-15


def test_image_mapping_monotone(tmp_path):
    p = tmp_path / "ramp.png"
    write_png(p, np.arange(256, dtype=np.uint8).reshape(1, 256), "L")
    img = load_image(p)
    vals = img.data[0, 0]
    assert np.all(np.diff(vals) > 0)
    expect = 2.0 * np.arange(256) / 255.0 - 1.0
    assert np.max(np.abs(vals - expect)) < 1e-15


def test_image_rgb_channels(tmp_path):
    p = tmp_path / "c.png"
    px = np.zeros((1, 1, 3), dtype=np.uint8)
    px[0, 0] = (255, 0, 128)
    write_png(p, px, "RGB")
    img = load_image(p)
    assert img.data.shape == (3, 1, 1)
    assert img.data[0, 0, 0] == 1.0
    assert img.data[1, 0, 0] == -1.0
    assert abs(img.data[2, 0, 0] - 1.0 / 255.0) < 1e-15


def test_image_save_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    # quantized values survive a write/read cycle exactly
    q = rng.integers(0, 256, size=(3, 5, 7))
    img = ImageTensor(2.0 * q / 255.0 - 1.0)
    p = tmp_path / "rt.png"
    save_image(img, p)
    back = load_image(p)
    assert np.array_equal(back.data, img.data)


def test_image_rejects_other_modes(tmp_path):
    p = tmp_path / "rgba.png"
    write_png(p, np.zeros((2, 2, 4), dtype=np.uint8), "RGBA")
    with pytest.raises(FileFormatError):
        load_image(p)


def test_mask_threshold(tmp_path):
    p = tmp_path / "m.png"
    write_png(p, np.array([[0, 127, 128, 255]], dtype=np.uint8), "L")
    m = load_mask(p)
    assert m.data.tolist() == [[0, 0, 1, 1]]


def test_mask_save_roundtrip(tmp_path):
    m = BinaryMask(np.array([[1, 0], [0, 1]], dtype=np.uint8))
    p = tmp_path / "m.png"
    save_mask(m, p)
    assert np.array_equal(load_mask(p).data, m.data)


def test_parsing_codes_roundtrip(tmp_path):
    codes = np.array([[0, 1, 17], [14, 4, 18]], dtype=np.uint8)
    p = tmp_path / "p.png"
    save_parsing(ParsingMap(codes), p)
    assert np.array_equal(load_parsing(p).data, codes)


def test_parsing_rejects_unknown_code(tmp_path):
    p = tmp_path / "bad.png"
    write_png(p, np.array([[19]], dtype=np.uint8), "L")
    with pytest.raises(FileFormatError):
        load_parsing(p)


# ---------------------------------------------------------------------------
# container validation


def test_image_tensor_validation():
    with pytest.raises(ValueError):
        ImageTensor(np.zeros((2, 4, 4)))  # 2 channels
    with pytest.raises(ValueError):
        ImageTensor(np.zeros((4, 4)))
    with pytest.raises(NumericError):
        ImageTensor(np.full((1, 2, 2), np.nan))
    with pytest.raises(NumericError):
        ImageTensor(np.full((3, 2, 2), np.inf))


def test_image_tensor_is_frozen_copy():
    src = np.zeros((1, 2, 2))
    img = ImageTensor(src)
    src[0, 0, 0] = 5.0  # caller's buffer stays theirs
    assert img.data[0, 0, 0] == 0.0
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1.0


def test_mask_validation():
    with pytest.raises(ValueError):
        BinaryMask(np.array([[0, 2]], dtype=np.uint8))
    m = BinaryMask(np.array([[0, 1]], dtype=np.uint8))
    f = m.as_float()
    assert f.dtype == np.float64 and f.tolist() == [[0.0, 1.0]]


def test_parsing_validation():
    with pytest.raises(ValueError):
        ParsingMap(np.array([[42]], dtype=np.uint8))


# ---------------------------------------------------------------------------
# SSDT tensor files


def test_ssdt_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    arr = rng.normal(size=(3, 4, 5)).astype(np.float32).astype(np.float64)
    p = tmp_path / "t.ssdt"
    write_ssdt(arr, p)
    back = read_ssdt(p)
    assert back.dtype == np.float64
    assert np.array_equal(back, arr)  # f32-representable values: bit exact


def test_ssdt_layout(tmp_path):
    # header is magic, version, ndim, dims, then little-endian f32 payload
    p = tmp_path / "t.ssdt"
    write_ssdt(np.array([[1.0, -2.0]]), p)
    raw = p.read_bytes()
    assert raw[:4] == b"SSDT"
    version, ndim, d0, d1 = struct.unpack_from("<IIII", raw, 4)
    assert (version, ndim, d0, d1) == (1, 2, 1, 2)
    assert np.frombuffer(raw[20:], dtype="<f4").tolist() == [1.0, -2.0]


def test_ssdt_bad_magic(tmp_path):
    p = tmp_path / "bad.ssdt"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FileFormatError, match="magic"):
        read_ssdt(p)


def test_ssdt_bad_version(tmp_path):
    p = tmp_path / "v.ssdt"
    write_ssdt(np.zeros((1, 1)), p)
    raw = bytearray(p.read_bytes())
    raw[4] = 9
    p.write_bytes(bytes(raw))
    with pytest.raises(FileFormatError, match="version"):
        read_ssdt(p)


def test_ssdt_short_payload(tmp_path):
    p = tmp_path / "s.ssdt"
    write_ssdt(np.ones((2, 3)), p)
    p.write_bytes(p.read_bytes()[:-4])  # drop one element
    with pytest.raises(FileFormatError, match="short"):
        read_ssdt(p)


def test_ssdt_dims_overflow(tmp_path):
    p = tmp_path / "o.ssdt"
    p.write_bytes(b"SSDT" + struct.pack("<IIII", 1, 2, 2**20, 2**20))
    with pytest.raises(FileFormatError, match="overflow"):
        read_ssdt(p)


def test_tensor_helpers(tmp_path):
    img = ImageTensor(np.linspace(-1, 1, 12).reshape(3, 2, 2))
    p = tmp_path / "img.ssdt"
    save_tensor(img, p)
    back = load_tensor(p)
    assert np.allclose(back.data, img.data, atol=1e-7)
    write_ssdt(np.zeros((4, 4)), tmp_path / "flat.ssdt")
    with pytest.raises(FileFormatError):
        load_tensor(tmp_path / "flat.ssdt")


# ---------------------------------------------------------------------------
# saturation


def test_saturation_gray_is_zero():
    img = ImageTensor(np.full((3, 2, 2), 0.25))
    assert np.array_equal(rgb_to_saturation(img).data, np.zeros((1, 2, 2)))


def test_saturation_pure_red():
    px = np.zeros((3, 1, 1))
    px[0] = 1.0
    px[1] = -1.0
    px[2] = -1.0
    assert rgb_to_saturation(ImageTensor(px)).data[0, 0, 0] == 1.0


def test_saturation_example_two_thirds():
    # (0.5, 0, -0.5) remaps to (0.75, 0.5, 0.25); S = 0.5/0.75 = 2/3
    px = np.array([0.5, 0.0, -0.5]).reshape(3, 1, 1)
    s = rgb_to_saturation(ImageTensor(px)).data[0, 0, 0]
    assert abs(s - 2.0 / 3.0) < 1e-12


def test_saturation_black_is_zero():
    px = np.full((3, 1, 1), -1.0)
    assert rgb_to_saturation(ImageTensor(px)).data[0, 0, 0] == 0.0


def test_saturation_matches_colorsys():
    import colorsys

    rng = np.random.default_rng(7)
    img = ImageTensor(rng.uniform(-1, 1, size=(3, 4, 4)))
    got = rgb_to_saturation(img).data[0]
    for i in range(4):
        for j in range(4):
            r, g, b = (img.data[:, i, j] + 1.0) / 2.0
            want = colorsys.rgb_to_hsv(r, g, b)[1]
            assert abs(got[i, j] - want) < 1e-12


def test_saturation_range_and_clip():
    rng = np.random.default_rng(9)
    img = ImageTensor(rng.uniform(-1.6, 1.6, size=(3, 8, 8)))
    s = rgb_to_saturation(img).data
    assert s.min() >= 0.0 and s.max() <= 1.0


def test_saturation_needs_rgb():
    with pytest.raises(ValueError):
        rgb_to_saturation(ImageTensor(np.zeros((1, 2, 2))))
