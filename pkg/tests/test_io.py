import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flashsep import io
from flashsep.raw_core import RawFormatError, RawImage


def sample_raw():
    data = np.arange(24, dtype=np.uint16).reshape(4, 6) * 100 + 64
    ccm = np.array([[1.5, -0.3, -0.2], [-0.1, 1.2, -0.1], [0.0, -0.5, 1.5]])
    return RawImage(data, "GBRG", 60, 4000, (2.0, 1.0, 1.5), ccm)


class TestFraw:
    def test_bit_exact_layout(self):
        raw = sample_raw()
        buf = io.encode_fraw(raw)
        head, body = buf.split(b"end\n", 1)
        lines = head.decode("ascii").splitlines()
        assert lines[:4] == ["FRAW1", "width 6 height 4", "cfa GBRG", "black 60 white 4000"]
        assert lines[4] == "wb 2.0 1.0 1.5"
        assert lines[5].split()[0] == "ccm" and len(lines[5].split()) == 10
        assert len(body) == 2 * 24
        assert struct.unpack("<H", body[:2])[0] == 64
        assert struct.unpack("<H", body[2:4])[0] == 164

    def test_round_trip(self, tmp_path):
        raw = sample_raw()
        io.write_fraw(tmp_path / "a.fraw", raw)
        back = io.read_fraw(tmp_path / "a.fraw")
        assert np.array_equal(back.data, raw.data)
        assert (back.cfa, back.black_level, back.white_level) == ("GBRG", 60, 4000)
        assert back.wb_gains == raw.wb_gains
        assert np.array_equal(back.ccm, raw.ccm)
        assert io.encode_fraw(back) == io.encode_fraw(raw)

    @given(arrays(np.uint16, (2, 4)), st.sampled_from(["RGGB", "BGGR", "GRBG", "GBRG"]))
    def test_round_trip_property(self, data, cfa):
        raw = RawImage(data, cfa, 0, 65535)
        assert np.array_equal(io.decode_fraw(io.encode_fraw(raw)).data, data)

    def test_rejects_truncated_and_bad_magic(self):
        buf = io.encode_fraw(sample_raw())
        with pytest.raises(RawFormatError):
            io.decode_fraw(buf[:-1])
        with pytest.raises(RawFormatError):
            io.decode_fraw(b"FRAW2" + buf[5:])
        with pytest.raises(RawFormatError):
            io.decode_fraw(buf.replace(b"cfa GBRG", b"cfa XXXX"))


class TestPfm:
    def test_header_and_row_order(self, tmp_path):
        img = np.arange(6, dtype=np.float32).reshape(2, 3)
        io.write_pfm(tmp_path / "a.pfm", img)
        buf = (tmp_path / "a.pfm").read_bytes()
        assert buf.startswith(b"Pf\n3 2\n-1.0\n")
        first_stored = struct.unpack("<f", buf[len(b"Pf\n3 2\n-1.0\n"):][:4])[0]
        assert first_stored == 3.0  # bottom row first

    @pytest.mark.parametrize("shape", [(4, 5), (4, 5, 3)])
    def test_round_trip(self, tmp_path, rng, shape):
        img = rng.random(shape).astype(np.float32)
        io.write_pfm(tmp_path / "a.pfm", img)
        assert np.array_equal(io.read_pfm(tmp_path / "a.pfm"), img)

    def test_rejects_two_channels(self, tmp_path):
        with pytest.raises(ValueError):
            io.write_pfm(tmp_path / "a.pfm", np.zeros((2, 2, 2)))


class TestPpm:
    def test_rounding(self):
        assert io.to_8bit(np.array([0.0, 1.0, 0.5, 2.0, -1.0, 1 / 510])).tolist() == [0, 255, 128, 255, 0, 1]

    def test_p6_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, (3, 4, 3)) / 255.0
        io.write_ppm(tmp_path / "a.ppm", img)
        assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n4 3\n255\n")
        assert np.allclose(io.read_ppm(tmp_path / "a.ppm"), img)

    def test_read_image_dispatch(self, tmp_path):
        io.write_ppm(tmp_path / "m.pgm", np.ones((2, 2)))
        assert io.read_image(tmp_path / "m.pgm").shape == (2, 2)
        with pytest.raises(ValueError):
            io.read_image(tmp_path / "m.png")
