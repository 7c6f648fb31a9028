import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flashsep import isp
from flashsep.raw_core import CFA_PATTERNS, RawImage, cfa_channel_map, delinearize, linearize


def tiled_plane(cfa, values, h=8, w=8):
    """Bayer plane whose photosites of channel c all hold values[c]."""
    return np.asarray(values, float)[cfa_channel_map(cfa, h, w)]


class TestDemosaic:
    @pytest.mark.parametrize("cfa", CFA_PATTERNS)
    def test_constant_plane(self, cfa):
        out = isp.demosaic(np.full((6, 8), 0.3), cfa)
        assert np.allclose(out, 0.3, atol=1e-15)

    @pytest.mark.parametrize("cfa", CFA_PATTERNS)
    def test_periodic_tile_is_exact(self, cfa):
        out = isp.demosaic(tiled_plane(cfa, (0.8, 0.4, 0.2)), cfa)
        assert np.allclose(out, (0.8, 0.4, 0.2), atol=1e-15)

    def test_green_at_red_site_is_neighbor_mean(self, rng):
        plane = rng.random((8, 8))
        out = isp.demosaic(plane, "RGGB")
        y, x = 4, 4  # red photosite in RGGB
        expected = (plane[y - 1, x] + plane[y + 1, x] + plane[y, x - 1] + plane[y, x + 1]) / 4
        assert out[y, x, 1] == pytest.approx(expected, abs=1e-15)
        blue = (plane[y - 1, x - 1] + plane[y - 1, x + 1] + plane[y + 1, x - 1] + plane[y + 1, x + 1]) / 4
        assert out[y, x, 2] == pytest.approx(blue, abs=1e-15)

    @pytest.mark.parametrize("cfa", CFA_PATTERNS)
    def test_native_channel_preserved(self, rng, cfa):
        plane = rng.random((10, 12))
        out = isp.demosaic(plane, cfa)
        native = np.take_along_axis(out, cfa_channel_map(cfa, 10, 12)[:, :, None], 2)[:, :, 0]
        assert np.array_equal(native, plane)

    def test_mosaic_inverse_on_smooth_image(self):
        yy, xx = np.mgrid[0:32, 0:32] / 31.0
        img = np.stack([0.2 + 0.5 * xx, 0.3 + 0.4 * yy, 0.6 - 0.3 * xx], -1)
        # linear ramps are reproduced exactly by bilinear interpolation in the interior
        out = isp.demosaic(isp.mosaic_plane(img, "BGGR"), "BGGR")
        assert np.abs(out - img)[2:-2, 2:-2].max() < 1e-12

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            isp.demosaic(np.zeros((3, 4)), "RGGB")
        with pytest.raises(ValueError):
            isp.demosaic(np.zeros((4, 4, 3)), "RGGB")


class TestColor:
    def test_white_balance(self):
        g = np.full((2, 2, 3), 0.25)
        assert np.array_equal(isp.white_balance(g, (1, 1, 1)), g)
        assert np.allclose(isp.white_balance(g, (2, 1, 1))[0, 0], (0.5, 0.25, 0.25))
        assert np.all(isp.white_balance(np.full((1, 1, 3), 0.5), (4, 4, 4)) == 1.0)
        with pytest.raises(ValueError):
            isp.white_balance(g, (1, -1, 1))

    def test_color_correct(self, rng):
        img = rng.random((3, 3, 3))
        assert np.allclose(isp.color_correct(img, np.eye(3)), img)
        ccm = np.array([[1.2, -0.1, -0.1], [-0.2, 1.4, -0.2], [0.05, -0.25, 1.2]])
        assert isp.color_correct(np.array([[[1.0, 0.0, 0.0]]]), ccm)[0, 0, 0] == 1.0
        gray = np.full((1, 1, 3), 0.37)
        assert np.allclose(isp.color_correct(gray, ccm), 0.37)
        with pytest.raises(ValueError):
            isp.color_correct(img, np.eye(3) * 1.1)


class TestGamma:
    def test_fixed_points_and_midpoint(self):
        assert isp.gamma_encode(np.array(0.0)) == 0.0
        assert isp.gamma_encode(np.array(1.0)) == pytest.approx(1.0, abs=1e-15)
        assert isp.gamma_encode(np.array(0.5)) == pytest.approx(1.055 * 0.5 ** (1 / 2.4) - 0.055, abs=1e-15)
        assert isp.gamma_encode(np.array(0.5)) == pytest.approx(0.735357, abs=1e-6)

    @pytest.mark.parametrize("gamma", ["srgb", 2.2])
    def test_round_trip(self, rng, gamma):
        x = rng.random(100_000)
        assert np.abs(isp.gamma_decode(isp.gamma_encode(x, gamma), gamma) - x).max() < 1e-6

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert isp.gamma_encode(np.array(lo)) <= isp.gamma_encode(np.array(hi))


class TestGrayscale:
    def test_weights(self):
        assert isp.LUMA_WEIGHTS.sum() == pytest.approx(1.0, abs=1e-15)
        assert isp.to_grayscale(np.array([1.0, 0, 0])) == pytest.approx(0.2126)
        assert isp.to_grayscale(np.array([0, 1.0, 0])) == pytest.approx(0.7152)

    @given(st.floats(0, 1))
    def test_gray_is_fixed(self, v):
        assert isp.to_grayscale(np.array([v, v, v])) == pytest.approx(v, abs=1e-12)


class TestPipeline:
    def test_black_raw(self):
        raw = RawImage(np.full((4, 4), 64, np.uint16))
        assert not isp.run_isp(raw).any()

    def test_constant_raw_identity_metadata(self):
        raw = RawImage(np.full((4, 4), 1500, np.uint16))
        v = (1500 - 64) / 4031
        assert np.allclose(isp.run_isp(raw), isp.gamma_encode(np.array(v)), atol=1e-15)

    def test_flash_only_with_ambient_metadata_matches_stages(self, rng):
        ccm = np.array([[1.3, -0.2, -0.1], [-0.1, 1.2, -0.1], [0.0, -0.3, 1.3]])
        amb = RawImage(rng.integers(64, 2000, (8, 8)), wb_gains=(1.8, 1.0, 1.4), ccm=ccm)
        fl = amb.with_data(amb.data + rng.integers(0, 1000, (8, 8)))
        plane = np.clip(linearize(fl) - linearize(amb), 0, 1)
        meta = isp.IspMetadata.from_raw(amb)
        manual = isp.gamma_encode(isp.color_correct(
            isp.white_balance(isp.demosaic(plane, "RGGB"), (1.8, 1.0, 1.4)), ccm))
        assert np.array_equal(isp.develop_plane(plane, "RGGB", meta), manual)

    @given(st.floats(0.01, 0.5), st.floats(1.0, 2.0))
    def test_monotone_in_exposure(self, c, k):
        meta = isp.IspMetadata((1.5, 1.0, 2.0), np.array([[1.2, -0.1, -0.1], [0, 1, 0], [-0.1, -0.1, 1.2]]))
        lo = isp.develop_plane(np.full((4, 4), c), "RGGB", meta)
        hi = isp.develop_plane(np.full((4, 4), min(1.0, k * c)), "RGGB", meta)
        assert np.all(hi >= lo - 1e-15)

    def test_metadata_validation(self):
        with pytest.raises(ValueError):
            isp.IspMetadata((0, 1, 1))
        with pytest.raises(ValueError):
            isp.IspMetadata(gamma=-1.0)
