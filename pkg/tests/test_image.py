import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from sarviews.errors import BoundsError, FormatError, IoError, ParamError
from sarviews.image import (
    GrayImage,
    QuantizedImage,
    Rect,
    crop,
    decode_image,
    dequantize,
    encode_pgm,
    gaussian_blur,
    load_image,
    quantize,
    save_pgm,
)

unit_images = arrays(
    np.float64,
    st.tuples(st.integers(1, 12), st.integers(1, 12)),
    elements=st.floats(0.0, 1.0, allow_nan=False),
)


def write_pgm(path, width, height, payload, maxval=255):
    path.write_bytes(f"P5\n{width} {height}\n{maxval}\n".encode() + bytes(payload))
    return path


# -- GrayImage ---------------------------------------------------------------

def test_grayimage_rejects_out_of_range():
    with pytest.raises(ParamError):
        GrayImage(np.array([[1.5]]))
    with pytest.raises(ParamError):
        GrayImage(np.array([[-0.1, 0.0]]))
    with pytest.raises(ParamError):
        GrayImage(np.zeros((0, 3)))


def test_grayimage_is_immutable_copy():
    src = np.zeros((2, 2))
    img = GrayImage(src)
    src[0, 0] = 1.0
    assert img.pixels[0, 0] == 0.0
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 0.5


def test_from_data_row_major():
    img = GrayImage.from_data(3, 2, [0, 0.1, 0.2, 0.3, 0.4, 0.5])
    assert (img.width, img.height) == (3, 2)
    assert img.pixels[1, 0] == 0.3
    assert len(img.data) == 6
    with pytest.raises(ParamError):
        GrayImage.from_data(3, 2, [0.0] * 5)


# -- load / save -------------------------------------------------------------

def test_load_pgm_values(tmp_path):
    img = load_image(write_pgm(tmp_path / "a.pgm", 2, 2, [0, 128, 255, 64]))
    assert (img.width, img.height) == (2, 2)
    np.testing.assert_allclose(img.data, [0.0, 0.50196, 1.0, 0.25098], atol=5e-6)
    assert img.data[1] == 128 / 255


def test_load_pgm_with_comment(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([10, 20]))
    assert load_image(path).data.tolist() == [10 / 255, 20 / 255]


@pytest.mark.parametrize("payload_len", [10, 17])
def test_pgm_payload_length_mismatch(tmp_path, payload_len):
    path = write_pgm(tmp_path / "bad.pgm", 4, 4, [0] * payload_len)
    with pytest.raises(FormatError) as exc:
        load_image(path)
    assert exc.value.field == "payload"


@pytest.mark.parametrize("header,field", [
    (b"P2\n2 2\n255\n", "magic"),
    (b"P5\nx 2\n255\n", "width"),
    (b"P5\n2 2\n65535\n", "maxval"),
    (b"P5\n2 2\n", "maxval"),
])
def test_pgm_header_errors_name_field(tmp_path, header, field):
    path = tmp_path / "h.pgm"
    path.write_bytes(header + bytes(4))
    with pytest.raises(FormatError) as exc:
        load_image(path)
    assert exc.value.field == field
    assert field in str(exc.value) or field == "magic"


def test_missing_file_is_ioerror(tmp_path):
    with pytest.raises(IoError):
        load_image(tmp_path / "nope.pgm")


def test_unknown_signature():
    with pytest.raises(FormatError):
        decode_image(b"GIF89a....")


def test_png_rgb_uses_bt601(tmp_path):
    path = tmp_path / "red.png"
    Image.fromarray(np.array([[[255, 0, 0], [0, 0, 255]]], dtype=np.uint8), "RGB").save(path)
    img = load_image(path)
    assert img.data[0] == pytest.approx(0.299, abs=1e-12)
    assert img.data[1] == pytest.approx(0.114, abs=1e-12)


def test_png_gray(tmp_path):
    path = tmp_path / "g.png"
    Image.fromarray(np.array([[0, 51, 255]], dtype=np.uint8), "L").save(path)
    assert load_image(path).data.tolist() == [0.0, 0.2, 1.0]


def test_png_16bit_rejected(tmp_path):
    path = tmp_path / "deep.png"
    Image.fromarray(np.array([[0, 1000]], dtype=np.uint16)).save(path)
    with pytest.raises(FormatError) as exc:
        load_image(path)
    assert exc.value.field == "bit_depth"


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9))))
def test_pgm_roundtrip_bit_exact(raw):
    first = decode_image(encode_pgm(GrayImage(raw / 255.0)))
    again = decode_image(encode_pgm(first))
    assert np.array_equal(first.to_bytes(), raw)
    assert encode_pgm(first) == encode_pgm(again)


def test_save_pgm_unwritable(tmp_path):
    with pytest.raises(IoError):
        save_pgm(GrayImage(np.zeros((2, 2))), tmp_path / "missing_dir" / "x.pgm")


# -- quantize ----------------------------------------------------------------

def test_quantize_floor_rule():
    img = GrayImage.from_data(4, 1, [0.0, 0.49, 0.5, 1.0])
    assert quantize(img, 2).indices.ravel().tolist() == [0, 0, 1, 1]


def test_quantize_top_clamp():
    assert quantize(GrayImage(np.ones((1, 1))), 8).indices[0, 0] == 7


def test_quantize_constant():
    q = quantize(GrayImage(np.full((3, 5), 0.3)), 16)
    assert np.all(q.indices == 4)
    assert (q.width, q.height) == (5, 3)


@pytest.mark.parametrize("levels", [1, 257, 0, 2.5])
def test_quantize_bad_levels(levels):
    with pytest.raises(ParamError):
        quantize(GrayImage(np.zeros((2, 2))), levels)


@given(st.integers(2, 256), st.data())
def test_quantize_dequantize_roundtrip(levels, data):
    idx = data.draw(arrays(np.int64, (3, 4), elements=st.integers(0, levels - 1)))
    q = QuantizedImage(idx, levels)
    assert np.array_equal(quantize(dequantize(q), levels).indices, idx)


@given(st.floats(0, 1), st.floats(0, 1), st.integers(2, 256))
def test_quantize_monotone(a, b, levels):
    a, b = min(a, b), max(a, b)
    q = quantize(GrayImage.from_data(2, 1, [a, b]), levels).indices.ravel()
    assert q[0] <= q[1]


# -- crop --------------------------------------------------------------------

def test_crop_identity_and_single_pixel():
    img = GrayImage(np.arange(12).reshape(3, 4) / 11)
    assert crop(img, Rect.full(4, 3)) == img
    one = crop(img, Rect(0, 0, 0, 0))
    assert one.shape == (1, 1) and one.pixels[0, 0] == img.pixels[0, 0]


def test_crop_bottom_right_block():
    img = GrayImage(np.arange(9).reshape(3, 3) / 8)
    out = crop(img, Rect(1, 1, 2, 2))
    np.testing.assert_array_equal(out.pixels * 8, [[4, 5], [7, 8]])


@pytest.mark.parametrize("rect", [Rect(0, 0, 3, 0), Rect(-1, 0, 1, 1), Rect(2, 0, 1, 1)])
def test_crop_out_of_bounds(rect):
    with pytest.raises(BoundsError):
        crop(GrayImage(np.zeros((3, 3))), rect)


@given(unit_images, st.data())
def test_crop_composition(arr, data):
    img = GrayImage(arr)
    h, w = arr.shape
    x0 = data.draw(st.integers(0, w - 1))
    x1 = data.draw(st.integers(x0, w - 1))
    y0 = data.draw(st.integers(0, h - 1))
    y1 = data.draw(st.integers(y0, h - 1))
    r1 = Rect(x0, y0, x1, y1)
    u0 = data.draw(st.integers(0, r1.width - 1))
    u1 = data.draw(st.integers(u0, r1.width - 1))
    v0 = data.draw(st.integers(0, r1.height - 1))
    v1 = data.draw(st.integers(v0, r1.height - 1))
    r2 = Rect(u0, v0, u1, v1)
    assert crop(crop(img, r1), r2) == crop(img, r1.compose(r2))


# -- blur --------------------------------------------------------------------

def test_blur_sigma_zero_identity():
    img = GrayImage(np.random.default_rng(0).random((5, 6)))
    assert gaussian_blur(img, 0) is img


@pytest.mark.parametrize("sigma", [0.3, 1.0, 2.5])
def test_blur_constant_image(sigma):
    out = gaussian_blur(GrayImage(np.full((6, 9), 0.37)), sigma)
    np.testing.assert_allclose(out.pixels, 0.37, atol=1e-12)


def test_blur_impulse_center_weight():
    arr = np.zeros((7, 7))
    arr[3, 3] = 1.0
    out = gaussian_blur(GrayImage(arr), 1.0)
    # independent evaluation of the normalized radius-3 kernel
    w = [math.exp(-x * x / 2.0) for x in range(-3, 4)]
    center_1d = w[3] / sum(w)
    assert out.pixels[3, 3] == pytest.approx(center_1d ** 2, abs=1e-15)
    assert out.pixels.sum() == pytest.approx(1.0, abs=1e-12)


def test_blur_negative_sigma():
    with pytest.raises(ParamError):
        gaussian_blur(GrayImage(np.zeros((2, 2))), -1)


@given(unit_images, st.floats(0, 4))
def test_blur_stays_in_unit_range(arr, sigma):
    out = gaussian_blur(GrayImage(arr), sigma).pixels
    assert out.min() >= 0.0 and out.max() <= 1.0
