import logging
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flashsep import rng as rngmod
from flashsep import scene_sim as ss
from flashsep.isp import IspMetadata, develop_plane, to_grayscale
from flashsep.raw_core import delinearize, linearize, subtract_flash_only


def flat_spec(size=8, albedo=0.5, **kw):
    a = np.full((size, size, 3), albedo)
    return ss.SceneSpec(albedo_t=a, albedo_r=a.copy(), **kw)


def textured_spec(seed=0, size=32, **kw):
    g = rngmod.stream(seed, "test-texture")
    return ss.SceneSpec(albedo_t=ss.random_texture((size, size), g),
                        albedo_r=ss.random_texture((size, size), g, style="stripes"), **kw)


class TestFalloffAndShading:
    def test_falloff_examples(self):
        assert ss.irradiance_falloff(1, 1) == 1
        assert ss.irradiance_falloff(1, 2) == 0.25

    @given(st.floats(0.01, 100), st.floats(0.01, 100))
    def test_halving_distance_quadruples(self, p, d):
        assert ss.irradiance_falloff(p, d / 2) == pytest.approx(4 * ss.irradiance_falloff(p, d))

    @pytest.mark.parametrize("d", [0, -1])
    def test_falloff_rejects_nonpositive(self, d):
        with pytest.raises(ValueError):
            ss.irradiance_falloff(1, d)

    def test_shading_examples(self):
        assert not np.any(ss.shade_lambertian([1, 1, 1], [1, 1, 1], 0.0))
        assert ss.shade_lambertian(1.0, np.pi, 1.0) == pytest.approx(1.0)
        out = ss.shade_lambertian([0.5] * 3, [2.0] * 3, 1.0)
        assert np.allclose(out, 1 / np.pi)
        assert out[0] == pytest.approx(0.3183, abs=1e-4)


class TestSpecValidation:
    @pytest.mark.parametrize("kw", [dict(r=0.6), dict(r=-0.1), dict(d_t=0.0), dict(flash_power=-1),
                                    dict(cos_map=1.5), dict(ambient_color=(1, -1, 1))])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            flat_spec(**kw)

    def test_transmittance(self):
        assert flat_spec(r=0.1).t == pytest.approx(0.9)

    def test_texture_shape_mismatch(self):
        with pytest.raises(ValueError):
            ss.SceneSpec(np.zeros((4, 4, 3)), np.zeros((4, 6, 3)))


class TestRender:
    def test_no_flash(self):
        s = ss.render_scene(textured_spec(flash_power=0.0))
        assert not s.i_fo.any()
        assert np.array_equal(s.i_f, s.i_a)
        assert np.array_equal(s.raw_f.data, s.raw_a.data)

    @given(st.integers(0, 10_000))
    def test_additivity_is_exact(self, seed):
        spec = ss.random_scene(rngmod.stream(seed, "s"), "standard", 16, noise_seed=seed)
        s = ss.render_scene(spec)
        assert np.abs(s.i_a - (s.t_a + s.r_a)).max() < 1e-12
        assert np.abs(s.i_f - (s.i_a + s.i_fo)).max() < 1e-12

    def test_ambient_scaling(self):
        spec = textured_spec(ambient_level=0.8, flash_power=1.5)
        a, b = ss.render_scene(spec), ss.render_scene(replace(spec, ambient_level=1.6))
        assert np.array_equal(a.i_fo, b.i_fo)
        assert np.allclose(b.i_a, 2 * a.i_a, rtol=0, atol=1e-15)
        assert np.allclose(b.r_a, 2 * a.r_a, rtol=0, atol=1e-15)

    def test_highlight_only_in_flash_frame(self):
        spec = textured_spec(highlight=ss.Highlight((16, 16), 3, 0.2))
        s, plain = ss.render_scene(spec), ss.render_scene(replace(spec, highlight=None))
        assert np.array_equal(s.i_a, plain.i_a)
        assert s.i_fo[16, 16, 0] - plain.i_fo[16, 16, 0] == pytest.approx(0.2)
        assert np.array_equal(s.t_fo, plain.t_fo)

    def test_dust_adds_to_flash_only(self):
        dust = np.zeros((32, 32))
        dust[4:6, 4:6] = 0.05
        spec = textured_spec()
        s, plain = ss.render_scene(replace(spec, dust=dust)), ss.render_scene(spec)
        diff = s.i_fo - plain.i_fo
        assert diff[5, 5].min() > 0 and not diff[20:, 20:].any()

    def test_raw_noise_is_seeded(self):
        spec = textured_spec(noise_sigma=0.01, noise_seed=3)
        a, b = ss.render_scene(spec), ss.render_scene(spec)
        c = ss.render_scene(replace(spec, noise_seed=4))
        assert np.array_equal(a.raw_a.data, b.raw_a.data)
        assert not np.array_equal(a.raw_a.data, c.raw_a.data)


class TestMosaic:
    def test_constant(self):
        raw = ss.mosaic(np.full((4, 6, 3), 0.3))
        assert np.all(raw.data == delinearize(np.array([0.3]), 64, 4095)[0])

    def test_round_trip_on_smooth_image(self):
        from flashsep.isp import demosaic
        yy, xx = np.mgrid[0:32, 0:32] / 31.0
        img = np.stack([0.1 + 0.6 * xx, 0.2 + 0.5 * yy, 0.7 - 0.4 * xx * yy], -1)
        raw = ss.mosaic(img, "GRBG")
        out = demosaic(linearize(raw), "GRBG")
        assert np.abs(out - img)[1:-1, 1:-1].max() < 2 / 4031

    def test_noise_level(self):
        img = np.full((1000, 1000, 3), 0.5)
        raw = ss.mosaic(img, noise_sigma=0.01, rng=np.random.default_rng(0))
        clean = ss.mosaic(img)
        std = np.std(raw.data.astype(float) - clean.data)
        assert abs(std / (0.01 * 4031) - 1) < 0.1

    def test_noise_needs_generator(self):
        with pytest.raises(ValueError):
            ss.mosaic(np.zeros((2, 2, 3)), noise_sigma=0.1)


class TestLeakage:
    def test_matched_glass_value(self):
        s = ss.render_scene(flat_spec(r=0.1, d_t=1.0, d_r=1.0))
        assert ss.reflection_leakage(s) == pytest.approx(0.01 / 0.81, abs=1e-12)
        assert abs(ss.reflection_leakage(s) - 0.012346) < 1e-6

    def test_no_reflection(self):
        assert ss.reflection_leakage(ss.render_scene(flat_spec(r=0.0))) == 0.0

    def test_distance_ratio(self):
        s = ss.render_scene(flat_spec(r=0.1, d_t=1.0, d_r=3.0))
        assert ss.reflection_leakage(s) == pytest.approx((0.01 / 0.81) / 9, abs=1e-12)
        assert abs(ss.reflection_leakage(s) - 0.001372) < 1e-6

    @given(st.floats(0.0, 0.5), st.floats(0.2, 5), st.floats(0.2, 5), st.integers(0, 1000))
    def test_closed_form_matches_renderer(self, r, d_t, d_r, seed):
        spec = replace(textured_spec(seed, size=16), r=r, d_t=d_t, d_r=d_r)
        s = ss.render_scene(spec)
        g = rngmod.stream(seed, "test-texture")
        lt = to_grayscale(spec.albedo_t).mean()
        lr = to_grayscale(spec.albedo_r).mean()
        oracle = (r ** 2 / (1 - r) ** 2) * (d_t / d_r) ** 2 * lr / lt
        assert ss.reflection_leakage(s) == pytest.approx(oracle, rel=1e-9, abs=1e-15)
        assert ss.leakage_closed_form(spec) == pytest.approx(oracle, rel=1e-9, abs=1e-15)

    def test_zero_transmission_energy(self):
        a = np.zeros((4, 4, 3))
        s = ss.render_scene(ss.SceneSpec(a, a + 0.5))
        with pytest.raises(ValueError):
            ss.reflection_leakage(s)


class TestLimitations:
    def test_far_transmission_fades(self):
        means = [ss.render_scene(replace(textured_spec(), d_t=d)).t_fo.mean() for d in (1, 2, 4, 8, 16, 64)]
        assert all(b < a for a, b in zip(means, means[1:]))

    def test_far_transmission_warns(self, caplog):
        spec = ss.random_scene(rngmod.stream(0, "far"), "far-transmission", 32)
        s = ss.render_scene(spec)
        assert s.t_fo.mean() < s.raw_a.quantization_step
        with caplog.at_level(logging.WARNING, logger="flashsep.scene_sim"):
            ss.warn_if_unlit(s)
        assert "below one quantization step" in caplog.text

    def test_color_distortion(self):
        spec = textured_spec(flash_color=(0.6, 0.8, 1.0), ambient_color=(1.0, 0.85, 0.55))
        s = ss.render_scene(spec)
        ratio = s.t_fo.mean(axis=(0, 1)) / s.t_a.mean(axis=(0, 1))
        assert np.ptp(ratio) / ratio.mean() > 0.1

    def test_reflection_free_after_isp(self):
        # transmission is black on the left half: only reflected flash remains there
        spec = textured_spec(r=0.1, d_t=1.0, d_r=1.0, flash_power=2.0)
        at = spec.albedo_t.copy()
        at[:, :16] = 0.0
        spec = replace(spec, albedo_t=at)
        s = ss.render_scene(spec)
        meta = IspMetadata.from_raw(s.raw_a)
        fo, _ = subtract_flash_only(s.raw_f, s.raw_a)
        dev = to_grayscale(develop_plane(fo, "RGGB", meta))
        region = dev[2:-2, 2:13].mean()
        lit = dev[2:-2, 19:-2].mean()
        assert region < 0.15 * lit


class TestPresets:
    @pytest.mark.parametrize("preset", ss.PRESETS)
    def test_presets_render(self, preset):
        spec = ss.random_scene(rngmod.stream(1, preset), preset, 16)
        s = ss.render_scene(spec)
        assert s.i_a.shape == (16, 16, 3) and np.isfinite(s.i_f).all()

    def test_deterministic(self):
        a = ss.random_scene(rngmod.stream(5, "x"), "standard", 16)
        b = ss.random_scene(rngmod.stream(5, "x"), "standard", 16)
        assert np.array_equal(a.albedo_t, b.albedo_t) and a.r == b.r

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            ss.random_scene(np.random.default_rng(0), "moonlight")


class TestSerialization:
    def test_round_trip(self, tmp_path):
        spec = replace(ss.random_scene(rngmod.stream(2, "io"), "standard", 16),
                       highlight=ss.Highlight((3.0, 4.0), 2.0, 0.1), dust=np.full((16, 16), 0.01))
        ss.write_spec(spec, tmp_path / "scene.txt")
        back = ss.read_spec(tmp_path / "scene.txt")
        assert back.r == spec.r and back.highlight == spec.highlight
        assert np.allclose(back.albedo_t, spec.albedo_t, atol=1e-7)
        a, b = ss.render_scene(spec), ss.render_scene(back)
        assert np.abs(a.i_f - b.i_f).max() < 1e-6

    def test_ppm_texture_and_defaults(self, tmp_path):
        from flashsep.io import write_ppm
        write_ppm(tmp_path / "t.ppm", np.full((4, 4, 3), 128 / 255))
        (tmp_path / "s.txt").write_text("albedo_t = t.ppm\nalbedo_r = t.ppm\nr = 0.2\n")
        spec = ss.read_spec(tmp_path / "s.txt")
        assert spec.r == 0.2 and spec.flash_power == 1.0
        assert spec.albedo_t[0, 0, 0] == pytest.approx((128 / 255) ** 2.2)

    def test_unknown_key(self, tmp_path):
        (tmp_path / "s.txt").write_text("albedo_t = a.pfm\nalbedo_r = a.pfm\nglare = 1\n")
        with pytest.raises(ValueError, match="glare"):
            ss.read_spec(tmp_path / "s.txt")
