import struct

import numpy as np
import pytest
from PIL import Image

from ldr2hdr.errors import DataError, FormatError
from ldr2hdr.image_io import HdrImage, LdrImage, load_hdr, load_ldr, resize, save_hdr, save_ldr


class TestContainers:
    def test_hdr_rejects_nan(self):
        px = np.ones((2, 2, 3), dtype=np.float32)
        px[1, 0, 2] = np.nan
        with pytest.raises(DataError, match=r"y=1.*x=0.*c=2"):
            HdrImage(px)

    def test_hdr_rejects_negative(self):
        px = np.ones((2, 2, 3), dtype=np.float32)
        px[0, 1, 0] = -0.5
        with pytest.raises(DataError, match="negative"):
            HdrImage(px)

    def test_ldr_rejects_out_of_range(self):
        with pytest.raises(DataError):
            LdrImage(np.full((2, 2, 3), 1.5, dtype=np.float32))

    def test_wrong_channel_count(self):
        with pytest.raises(DataError):
            HdrImage(np.ones((2, 2, 4), dtype=np.float32))

    def test_pixels_are_read_only(self, random_hdr):
        with pytest.raises(ValueError):
            random_hdr.pixels[0, 0, 0] = 1.0


class TestPfm:
    def test_identity_payload(self, tmp_path):
        img = HdrImage(np.ones((2, 2, 3), dtype=np.float32))
        path = tmp_path / "ones.pfm"
        save_hdr(img, path)
        np.testing.assert_array_equal(load_hdr(path).pixels, img.pixels)

    def test_round_trip_bit_exact(self, tmp_path, random_hdr):
        path = tmp_path / "r.pfm"
        save_hdr(random_hdr, path)
        back = load_hdr(path)
        assert back.pixels.tobytes() == random_hdr.pixels.tobytes()

    def test_zero_image(self, tmp_path):
        img = HdrImage(np.zeros((1, 1, 3), dtype=np.float32))
        path = tmp_path / "z.pfm"
        save_hdr(img, path)
        np.testing.assert_array_equal(load_hdr(path).pixels, 0.0)

    def test_row_order_is_bottom_up(self, tmp_path):
        # bottom row must be written first in the file
        px = np.zeros((2, 1, 3), dtype=np.float32)
        px[0] = 1.0  # top row
        path = tmp_path / "rows.pfm"
        save_hdr(HdrImage(px), path)
        payload = path.read_bytes().split(b"-1.0\n", 1)[1]
        first_row = struct.unpack("<3f", payload[:12])
        assert first_row == (0.0, 0.0, 0.0)

    def test_nan_payload_is_data_error(self, tmp_path):
        path = tmp_path / "bad.pfm"
        header = b"PF\n2 1\n-1.0\n"
        floats = struct.pack("<6f", 1.0, float("nan"), 1.0, 1.0, 1.0, 1.0)
        path.write_bytes(header + floats)
        with pytest.raises(DataError, match="non-finite"):
            load_hdr(path)

    def test_negative_values_clamped_with_warning(self, tmp_path):
        path = tmp_path / "neg.pfm"
        path.write_bytes(b"PF\n1 1\n-1.0\n" + struct.pack("<3f", -1.0, 0.5, 2.0))
        with pytest.warns(UserWarning, match="clamped 1"):
            img = load_hdr(path)
        np.testing.assert_array_equal(img.pixels[0, 0], [0.0, 0.5, 2.0])

    def test_single_channel_rejected(self, tmp_path):
        path = tmp_path / "gray.pfm"
        path.write_bytes(b"Pf\n1 1\n-1.0\n" + struct.pack("<f", 1.0))
        with pytest.raises(FormatError, match="single-channel"):
            load_hdr(path)

    def test_unknown_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.dat"
        path.write_bytes(b"XX not an image")
        with pytest.raises(FormatError, match="unsupported"):
            load_hdr(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "trunc.pfm"
        path.write_bytes(b"PF\n4 4\n-1.0\n" + b"\x00" * 10)
        with pytest.raises(FormatError, match="truncated"):
            load_hdr(path)

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(OSError):
            load_hdr(tmp_path / "nope.pfm")


class TestRgbe:
    def test_hand_decoded_pixel(self, tmp_path):
        # mantissa 128, exponent byte 129: 128 * 2^(129-136) = 1.0 per channel
        path = tmp_path / "one.hdr"
        path.write_bytes(b"#?RADIANCE\n\n-Y 1 +X 1\n" + bytes((128, 128, 128, 129)))
        img = load_hdr(path)
        np.testing.assert_allclose(img.pixels[0, 0], [1.0, 1.0, 1.0], rtol=0, atol=0)

    def test_zero_pixel(self, tmp_path):
        path = tmp_path / "zero.hdr"
        path.write_bytes(b"#?RADIANCE\n\n-Y 1 +X 1\n" + bytes((0, 0, 0, 0)))
        np.testing.assert_array_equal(load_hdr(path).pixels, 0.0)

    def test_round_trip_within_one_percent(self, tmp_path, rng):
        # shared-exponent quantization: per-pixel channel ratio <= 2 keeps
        # every mantissa >= 64, so rounding error stays below 0.5/64 ~ 0.8%
        base = rng.uniform(0.5, 1.0, size=(32, 32, 3))
        scale = np.exp(rng.uniform(np.log(0.01), np.log(100.0), size=(32, 32, 1)))
        img = HdrImage((base * scale).astype(np.float32))
        path = tmp_path / "rt.hdr"
        save_hdr(img, path)
        back = load_hdr(path)
        rel = np.abs(back.pixels - img.pixels) / img.pixels
        assert rel.max() <= 0.01

    def test_rle_round_trip(self, tmp_path):
        # constant rows exercise the run-length path, noise the literal path
        px = np.ones((4, 64, 3), dtype=np.float32)
        px[1] = 0.25
        px[2] = np.linspace(0.1, 8.0, 64 * 3).reshape(64, 3).astype(np.float32)
        img = HdrImage(px)
        path = tmp_path / "rle.hdr"
        save_hdr(img, path)
        back = load_hdr(path)
        assert (path.stat().st_size) < 4 * 64 * 4 + 64  # RLE actually compressed
        np.testing.assert_allclose(back.pixels, img.pixels, rtol=0.01, atol=1e-6)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.hdr"
        path.write_bytes(b"#?NOTRADIANCE\n\n-Y 1 +X 1\n" + bytes(4))
        with pytest.raises(FormatError):
            load_hdr(path)

    def test_unknown_extension_on_save(self, tmp_path, random_hdr):
        with pytest.raises(FormatError):
            save_hdr(random_hdr, tmp_path / "img.exr")


class TestLdrIo:
    def test_endpoint_codes(self, tmp_path):
        arr = np.zeros((1, 2, 3), dtype=np.uint8)
        arr[0, 0] = 255
        arr[0, 1] = 128
        path = tmp_path / "p.png"
        Image.fromarray(arr, mode="RGB").save(path)
        img = load_ldr(path)
        np.testing.assert_allclose(img.pixels[0, 0], 1.0)
        np.testing.assert_allclose(img.pixels[0, 1], 128 / 255, rtol=1e-7)

    def test_save_load_code_fixed_point(self, tmp_path, rng):
        codes = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        path = tmp_path / "a.png"
        Image.fromarray(codes, mode="RGB").save(path)
        img = load_ldr(path)
        path2 = tmp_path / "b.png"
        save_ldr(img, path2)
        np.testing.assert_array_equal(np.asarray(Image.open(path2)), codes)

    def test_jpeg_read_supported(self, tmp_path):
        arr = np.full((8, 8, 3), 200, dtype=np.uint8)
        path = tmp_path / "j.jpg"
        Image.fromarray(arr, mode="RGB").save(path, quality=95)
        img = load_ldr(path)
        assert img.pixels.shape == (8, 8, 3)
        assert img.source_bit_depth == 8

    def test_jpeg_write_rejected(self, tmp_path, random_ldr):
        with pytest.raises(FormatError):
            save_ldr(random_ldr, tmp_path / "x.jpg")

    def test_non_image_file(self, tmp_path):
        path = tmp_path / "junk.png"
        path.write_bytes(b"this is not a png")
        with pytest.raises(FormatError):
            load_ldr(path)


class TestResize:
    def test_constant_stays_constant(self):
        img = HdrImage(np.full((8, 6, 3), 0.7, dtype=np.float32))
        out = resize(img, 13, 5)
        assert (out.height, out.width) == (5, 13)
        np.testing.assert_allclose(out.pixels, 0.7, rtol=1e-6)

    def test_checkerboard_to_single_pixel(self):
        # brute-force bilinear at the center of a 2x2 {0,1} checkerboard is 0.5
        px = np.zeros((2, 2, 3), dtype=np.float32)
        px[0, 0] = px[1, 1] = 1.0
        out = resize(HdrImage(px), 1, 1)
        np.testing.assert_allclose(out.pixels, 0.5, rtol=0, atol=0)

    def test_up_then_down_preserves_invariants_only(self, rng):
        img = LdrImage(rng.uniform(0, 1, size=(16, 16, 3)).astype(np.float32))
        up = resize(img, 32, 32)
        down = resize(up, 16, 16)
        assert down.pixels.min() >= 0.0 and down.pixels.max() <= 1.0

    def test_range_preserved(self, rng):
        for _ in range(5):
            src = HdrImage(rng.uniform(0.5, 3.0, size=(9, 7, 3)).astype(np.float32))
            out = resize(src, 23, 4)
            assert out.pixels.min() >= src.pixels.min() - 1e-6
            assert out.pixels.max() <= src.pixels.max() + 1e-6

    def test_identity_size(self, random_hdr):
        out = resize(random_hdr, random_hdr.width, random_hdr.height)
        np.testing.assert_array_equal(out.pixels, random_hdr.pixels)

    def test_bad_target(self, random_hdr):
        with pytest.raises(ValueError):
            resize(random_hdr, 0, 4)
        with pytest.raises(ValueError):
            resize(random_hdr, 4, -1)
