"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import inspect
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from flashsep import rng as rngmod
from flashsep import scene_sim as ss
from flashsep.cli import main
from flashsep.data_synth import DEFAULT_SPLIT
from flashsep.isp import LUMA_WEIGHTS, demosaic, gamma_decode, gamma_encode, mosaic_plane
from flashsep.metrics import INPUT_ROW, evaluate, psnr, ssim
from flashsep.nn import TrainConfig, prepare_sample
from flashsep.nn.gradcheck import TOLERANCE, run_all
from flashsep.nn.model import Model
from flashsep.pipeline import load_prepared, make_dataset, simulate, train_many
from flashsep.raw_core import CFA_PATTERNS, linearize, subtract_flash_only


def test_reflection_free_cue(criterion):
    start = time.perf_counter()
    albedo = np.full((16, 16, 3), 0.5)
    spec = ss.SceneSpec(albedo, albedo.copy(), r=0.1, d_t=1.0, d_r=1.0)
    value = ss.reflection_leakage(ss.render_scene(spec))
    oracle = 0.1 ** 2 / 0.9 ** 2
    elapsed = time.perf_counter() - start
    ok = abs(value - 0.012346) <= 1e-6 and abs(value - oracle) <= 1e-6 and elapsed < 1.0
    criterion(1, "reflection-free cue", ok, f"leakage={value:.7f} oracle={oracle:.7f} t={elapsed:.3f}s")


def _sampled(img, cfa):
    return mosaic_plane(img, cfa)


def test_additivity(criterion):
    start = time.perf_counter()
    float_dev, raw_dev = 0.0, 0.0
    for i in range(100):
        preset = ss.PRESETS[i % len(ss.PRESETS)]
        spec = ss.random_scene(rngmod.stream(11, "additivity", i), preset, 32, noise_sigma=0.0)
        s = ss.render_scene(spec)
        float_dev = max(float_dev,
                        np.abs(s.i_f.astype(np.float32) - (s.i_a.astype(np.float32) + s.i_fo.astype(np.float32))).max(),
                        np.abs(s.i_a.astype(np.float32) - (s.t_a.astype(np.float32) + s.r_a.astype(np.float32))).max())
        cfa, step = s.raw_a.cfa, s.raw_a.quantization_step
        _, valid = subtract_flash_only(s.raw_f, s.raw_a)
        lin_a, lin_f = linearize(s.raw_a), linearize(s.raw_f)
        dev_f = np.abs(lin_f - (lin_a + _sampled(s.i_fo, cfa)))[valid]
        dev_a = np.abs(lin_a - _sampled(s.t_a + s.r_a, cfa))[valid]
        raw_dev = max(raw_dev, dev_f.max(initial=0.0) / step, dev_a.max(initial=0.0) / step)
    elapsed = time.perf_counter() - start
    ok = float_dev < 1e-6 and raw_dev < 1.5 and elapsed < 10.0
    criterion(2, "additivity", ok, f"float={float_dev:.2e} raw={raw_dev:.3f} steps t={elapsed:.2f}s")


def test_ambient_invariance(criterion):
    start = time.perf_counter()
    worst = 0.0
    for i in range(20):
        spec = ss.random_scene(rngmod.stream(12, "ambient", i), "standard", 32, noise_sigma=0.0)
        a = ss.render_scene(spec)
        b = ss.render_scene(replace(spec, ambient_level=2.0 * spec.ambient_level))
        fo_a, va = subtract_flash_only(a.raw_f, a.raw_a)
        fo_b, vb = subtract_flash_only(b.raw_f, b.raw_a)
        valid = va & vb
        worst = max(worst, np.abs(fo_a - fo_b)[valid].max(initial=0.0) / a.raw_a.quantization_step)
    elapsed = time.perf_counter() - start
    ok = worst < 2.0 and elapsed < 10.0
    criterion(3, "ambient invariance", ok, f"max change={worst:.3f} steps t={elapsed:.2f}s")


def test_isp_correctness(criterion):
    x = np.random.default_rng(4).random(100_000)
    gamma_err = max(np.abs(gamma_decode(gamma_encode(x, g), g) - x).max() for g in ("srgb", 2.2))
    tile_ok = True
    for cfa in CFA_PATTERNS:
        img = np.broadcast_to(np.array([0.2, 0.55, 0.8]), (12, 16, 3))
        tile_ok &= np.array_equal(demosaic(mosaic_plane(img, cfa), cfa), img)
    weight_sum = float(LUMA_WEIGHTS.sum())
    ok = gamma_err < 1e-6 and tile_ok and abs(weight_sum - 1.0) < 1e-12
    criterion(4, "ISP correctness", ok, f"gamma err={gamma_err:.2e} tiles exact={tile_ok} luma sum={weight_sum!r}")


def test_gradient_check(criterion):
    start = time.perf_counter()
    results = run_all(seed=0)
    elapsed = time.perf_counter() - start
    for r in results:
        print(r.line())
    worst = max(r.max_rel_error for r in results)
    names = {r.name for r in results}
    ok = all(r.passed for r in results) and worst < TOLERANCE and elapsed < 120 and any("two_stage_fo" in n for n in names)
    criterion(5, "gradient check", ok, f"{len(results)} checks max rel err={worst:.2e} t={elapsed:.1f}s")


def test_wiring_invariant(criterion):
    g = np.random.default_rng(6)
    model = Model("two_stage_fo", (2, 2, 2))
    params = {k: v + 0.1 * g.standard_normal(v.shape) for k, v in model.init_params(0, np.float64).items()}
    sample = {k: g.random((3, 8, 8)) for k in ("ia", "ifo", "if", "ta", "ra")}
    r_keys = [k for k in params if k.startswith("R.")]

    # gradient of L_T with respect to the reflection net, by finite differences along a random direction
    _, _, full = model.loss_and_grads(params, sample)
    _, _, detached = model.loss_and_grads(params, sample, detach_reflection=True)
    direction = {k: g.standard_normal(params[k].shape) for k in r_keys}
    h = 1e-5

    def loss_t(sign):
        p = {k: v + sign * h * direction[k] if k in direction else v for k, v in params.items()}
        return model.loss_and_grads(p, sample, need_grads=False)[1]["T"]

    numeric = (loss_t(1) - loss_t(-1)) / (2 * h)
    induced = sum(float(np.sum((full[k] - detached[k]) * direction[k])) for k in r_keys)
    reaches = abs(numeric) > 1e-8 and abs(induced - numeric) <= 1e-5 * max(1.0, abs(numeric))

    # g_T sees only (i_a, R_hat): its signature, its input width, and a perturbation of i_fo
    sig = list(inspect.signature(model.g_T).parameters)
    width = model.nets["T"].arch.in_channels
    t1, r1 = model.predict(params, sample["ia"], sample["ifo"])
    ifo2 = sample["ifo"] + g.random(sample["ifo"].shape)
    t2, r2 = model.predict(params, sample["ia"], ifo2)
    through_r_only = (np.array_equal(t1, model.g_T(params, sample["ia"], r1))
                      and np.array_equal(t2, model.g_T(params, sample["ia"], r2)) and not np.array_equal(r1, r2))
    fixed_r = np.array_equal(model.g_T(params, sample["ia"], r1), model.g_T(params, sample["ia"], r1.copy()))
    independent = sig == ["params", "i_a", "r_hat"] and width == 6 and through_r_only and fixed_r

    ok = reaches and independent
    criterion(6, "wiring invariant", ok,
              f"dL_T/dtheta_R numeric={numeric:.4e} analytic={induced:.4e} g_T inputs={sig[1:]} width={width}")


ABLATION_SEEDS = (0, 1, 2)
ABLATION_VARIANTS = ("two_stage_fo", "single_ia", "two_stage_f")


@pytest.fixture(scope="module")
def ablation(tmp_path_factory):
    start = time.perf_counter()
    out = tmp_path_factory.mktemp("ablation")
    samples = simulate("strong-reflection", 128, seed=0, size=64, warn=False)
    manifest = make_dataset(samples, out / "data", seed=0, proportions=DEFAULT_SPLIT)
    tr, va, te = (load_prepared(manifest, r) for r in ("train", "val", "test"))
    base = TrainConfig(epochs=40, learning_rate=1e-3, lr_schedule="cosine")
    jobs = [(tr, va, v, replace(base, seed=s)) for s in ABLATION_SEEDS for v in ABLATION_VARIANTS]
    results = train_many(jobs)
    by_key = {(s, v): res for (s, v), res in
              zip([(s, v) for s in ABLATION_SEEDS for v in ABLATION_VARIANTS], results)}
    reports = {s: evaluate(te, {"two_stage_fo": by_key[(s, "two_stage_fo")].checkpoint}) for s in ABLATION_SEEDS}
    return by_key, reports, time.perf_counter() - start


@pytest.mark.slow
def test_toy_ablation_ordering(criterion, ablation):
    by_key, _, elapsed = ablation
    final = {k: res.history[-1][2] for k, res in by_key.items()}
    rows, ok = [], elapsed < 30 * 60
    for s in ABLATION_SEEDS:
        fo, ia, f = (final[(s, v)] for v in ABLATION_VARIANTS)
        ok &= fo < ia and fo < f
        rows.append(f"seed {s}: fo={fo:.5f} ia={ia:.5f} f={f:.5f}")
    for r in rows:
        print(r)
    criterion(7, "toy ablation ordering", ok, "; ".join(rows) + f"; t={elapsed / 60:.1f}min")


@pytest.mark.slow
def test_do_nothing_beaten(criterion, ablation):
    _, reports, _ = ablation
    gains = []
    for s in ABLATION_SEEDS:
        rows = {r.variant: r for r in reports[s]}
        gains.append(rows["two_stage_fo"].psnr_mean - rows[INPUT_ROW].psnr_mean)
    ok = all(gain >= 1.0 for gain in gains)
    criterion(8, "do-nothing baseline beaten", ok, "gain dB per seed: " + ", ".join(f"{x:.2f}" for x in gains))


def test_metric_sanity(criterion):
    a = np.random.default_rng(9).uniform(0.2, 0.8, (32, 32, 3))
    p = psnr(a, a + 0.1)
    self_ssim = ssim(a, a)
    c1 = (0.01 * 1.0) ** 2
    closed = (2 * 0.2 * 0.4 + c1) / (0.2 ** 2 + 0.4 ** 2 + c1)
    const = ssim(np.full((16, 16), 0.2), np.full((16, 16), 0.4), channel_axis=None)
    ok = abs(p - 20.0) <= 1e-4 and self_ssim == 1.0 and abs(const - closed) <= 1e-6
    criterion(9, "metric sanity", ok, f"psnr={p:.6f} ssim(a,a)={self_ssim!r} const={const:.8f} closed={closed:.8f}")


def _artifacts(root: Path) -> dict[str, bytes]:
    files = sorted(root.glob("checkpoints/*.ckpt")) + [root / "data" / "manifest.tsv"]
    files += sorted(root.glob("eval/*.csv")) + sorted(root.glob("logs/*.csv"))
    return {str(f.relative_to(root)): f.read_bytes() for f in files}


def test_determinism(criterion, tmp_path):
    runs = []
    for name in ("a", "b"):
        code = main(["ablate", "--tiny", "--seed", "3", "--out-dir", str(tmp_path / name), "--log-level", "WARNING"])
        assert code == 0
        runs.append(_artifacts(tmp_path / name))
    same = runs[0].keys() == runs[1].keys() and all(runs[0][k] == runs[1][k] for k in runs[0])
    n_ck = sum(k.endswith(".ckpt") for k in runs[0])
    ok = same and n_ck == 5 and "data/manifest.tsv" in runs[0]
    criterion(10, "determinism", ok, f"{len(runs[0])} files compared, {n_ck} checkpoints")
