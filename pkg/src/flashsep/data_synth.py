"""Synthetic training pairs, dataset splits, manifests and sample storage.

Display-referred sources are decoded back to linear light before the
reflection is composited onto the transmission, so the ambient image obeys
``I_a = T_a + R_a`` in the linear domain.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import rng as rngmod
from .io import read_fraw, read_pfm, write_fraw, write_pfm
from .isp import gamma_decode
from .raw_core import subtract_flash_only
from .scene_sim import SampleSet, gray_world_gains, mosaic

log = logging.getLogger(__name__)

ROLES = ("train", "val", "test")
DEFAULT_SPLIT = (77 / 157, 30 / 157, 50 / 157)
CROP_PIXEL_LIMIT = 640_000
SOURCE_GAMMA = 2.2


class SplitError(ValueError):
    """The requested proportions cannot be honored with the given groups."""


@dataclass(frozen=True)
class SynthParams:
    reflection_kind: str = "blurry"
    sigma: float = 2.0
    reflection_weight: float = 0.6
    crop: int | None = None
    seed: int = 0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.reflection_kind not in ("blurry", "sharp"):
            raise ValueError(f"reflection_kind must be 'blurry' or 'sharp', got {self.reflection_kind!r}")
        if self.sigma < 0:
            raise ValueError("blur sigma must be non-negative")
        if not 0.0 < self.reflection_weight <= 1.0:
            raise ValueError(f"reflection weight must lie in (0, 1], got {self.reflection_weight}")


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-x ** 2 / (2 * sigma ** 2))
    return k / k.sum()


def blur_reflection(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflected borders; sigma 0 is identity."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    img = np.asarray(img, dtype=np.float64)
    if sigma == 0:
        return img.copy()
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(img, k, axis=0, mode="reflect")
    return ndimage.correlate1d(out, k, axis=1, mode="reflect")


def synthesize_pair(t_rgb: np.ndarray, fo_rgb: np.ndarray, r_rgb: np.ndarray, p: SynthParams,
                    gamma: str | float = SOURCE_GAMMA, cfa: str = "RGGB",
                    black_level: int = 64, white_level: int = 4095, sample_id: str = "synth") -> SampleSet:
    """Composite a reflection onto a transmission in linear space."""
    if not (t_rgb.shape == fo_rgb.shape == r_rgb.shape):
        raise ValueError(f"source shapes differ: {t_rgb.shape}, {fo_rgb.shape}, {r_rgb.shape}")
    t_a = gamma_decode(t_rgb, gamma)
    r_src = blur_reflection(r_rgb, p.sigma) if p.reflection_kind == "blurry" else np.asarray(r_rgb, float)
    r_a = p.reflection_weight * gamma_decode(r_src, gamma)
    i_fo = gamma_decode(fo_rgb, gamma)
    i_a = np.clip(t_a + r_a, 0.0, 1.0)
    i_f = np.clip(i_a + i_fo, 0.0, 1.0)
    # keep the flash-only image consistent with the clamped flash frame
    i_fo = i_f - i_a

    kw = dict(cfa=cfa, black_level=black_level, white_level=white_level, noise_sigma=p.noise_sigma)
    raw_a = mosaic(i_a, rng=rngmod.stream(p.seed, sample_id, "noise", "ambient"), exposure_tag="ambient", **kw)
    raw_f = mosaic(i_f, rng=rngmod.stream(p.seed, sample_id, "noise", "flash"), exposure_tag="flash",
                   wb_gains=gray_world_gains(i_f), **kw)
    _, mask = subtract_flash_only(raw_f, raw_a)
    return SampleSet(i_a, i_f, i_fo, t_a, r_a, raw_a, raw_f, mask, sample_id)


def clamped_fraction(t_a: np.ndarray, r_a: np.ndarray) -> float:
    """Share of pixels where ``T + R`` leaves [0, 1] and compositing clips."""
    return float(np.mean(np.any(t_a + r_a > 1.0, axis=-1)))


@dataclass(frozen=True, eq=False)
class SynthSource:
    """Display-referred inputs for one synthetic pair and the source keys it uses."""

    sample_id: str
    t_rgb: np.ndarray
    fo_rgb: np.ndarray
    r_rgb: np.ndarray
    params: SynthParams
    sources: tuple[str, ...]


REFLECTIONS_PER_TRANSMISSION = 2


def synthetic_sources(count: int, seed: int = 0, size: int = 64,
                      alpha_range=(0.3, 0.9), sigma_range=(1.0, 4.0), sharp_fraction: float = 0.2,
                      preset: str = "standard", noise_sigma: float = 0.002) -> list[SynthSource]:
    """Stand-in for external photo collections, rendered with the scene simulator.

    Every transmission scene (ambient view plus its flash-only view) is
    paired with :data:`REFLECTIONS_PER_TRANSMISSION` different reflection
    textures; most reflections are blurred, a ``sharp_fraction`` share are
    not.  Sources are stored gamma-encoded with a 2.2 power law.
    """
    from .isp import gamma_encode
    from .scene_sim import random_scene, render_components

    lo, hi = alpha_range
    if not 0 < lo <= hi <= 1:
        raise ValueError(f"alpha range must satisfy 0 < lo <= hi <= 1, got {alpha_range}")
    if sigma_range[0] < 0 or sigma_range[0] > sigma_range[1]:
        raise ValueError(f"invalid blur sigma range {sigma_range}")

    def encode(x):
        return gamma_encode(np.clip(x, 0.0, 1.0), SOURCE_GAMMA)

    out = []
    scene = None
    for i in range(count):
        k = i // REFLECTIONS_PER_TRANSMISSION
        if i % REFLECTIONS_PER_TRANSMISSION == 0:
            spec = random_scene(rngmod.stream(seed, "synth", "transmission", k), preset, size)
            comp = render_components(replace(spec, r=0.0, highlight=None))
            # flash scaled so ambient + flash rarely clips
            scene = (encode(comp["t_a"]), encode(0.6 * (comp["t_fo"] + comp["artifacts_fo"])))
        g = rngmod.stream(seed, "synth", "reflection", i)
        r_spec = random_scene(g, preset, size)
        r_rgb = encode(r_spec.albedo_r * g.uniform(0.3, 0.6))
        sharp = g.random() < sharp_fraction
        params = SynthParams("sharp" if sharp else "blurry",
                             0.0 if sharp else float(g.uniform(*sigma_range)),
                             float(g.uniform(lo, hi)), seed=seed, noise_sigma=noise_sigma)
        out.append(SynthSource(f"syn{i:05d}", scene[0], scene[1], r_rgb, params,
                               (f"t{k}", f"r{i}")))
    return out


def build_synthetic(sources: list[SynthSource], **kw) -> list[SampleSet]:
    return [synthesize_pair(s.t_rgb, s.fo_rgb, s.r_rgb, s.params, sample_id=s.sample_id, **kw)
            for s in sources]


# --------------------------------------------------------------------------
# splits

def _group_ids(ids, sources):
    """Union ids that share any source key; returns groups in first-seen order."""
    parent = {i: i for i in ids}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    owner = {}
    for i in ids:
        for key in sources.get(i, ()):
            if key in owner:
                a, b = find(owner[key]), find(i)
                if a != b:
                    parent[b] = a
            else:
                owner[key] = i
    groups = {}
    for i in ids:
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def split_dataset(ids, proportions=DEFAULT_SPLIT, seed: int = 0,
                  sources: dict | None = None) -> dict[str, str]:
    """Assign each id a role.

    Ids sharing a source (per ``sources``: id -> iterable of source keys) are
    kept in the same role.  Groups are shuffled deterministically and
    partitioned contiguously toward the target counts.
    """
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise ValueError("sample ids must be unique")
    props = tuple(float(p) for p in proportions)
    if len(props) != 3 or min(props) < 0 or abs(sum(props) - 1.0) > 1e-9:
        raise ValueError(f"proportions must be three non-negative numbers summing to 1, got {proportions}")
    n = len(ids)
    n_train = int(math.floor(props[0] * n + 0.5))
    n_val = int(math.floor(props[1] * n + 0.5))
    n_val = min(n_val, n - n_train)
    targets = (n_train, n_val, n - n_train - n_val)

    groups = _group_ids(sorted(ids), sources or {})
    order = rngmod.stream(seed, "split").permutation(len(groups))
    roles = {}
    counts = [0, 0, 0]
    role = 0
    for gi in order:
        group = groups[gi]
        while role < 2 and counts[role] >= targets[role]:
            role += 1
        for i in group:
            roles[i] = ROLES[role]
        counts[role] += len(group)

    for k in range(3):
        if targets[k] > 0 and counts[k] == 0:
            raise SplitError(f"no samples left for role {ROLES[k]!r} (target {targets[k]}); "
                             f"source groups are too large for these proportions")
    if tuple(counts) != targets:
        log.warning("split sizes %s differ from targets %s because of shared sources", counts, targets)
    return roles


# --------------------------------------------------------------------------
# cropping

def random_crop(s: SampleSet, crop: int, seed: int = 0,
                pixel_limit: int = CROP_PIXEL_LIMIT) -> SampleSet:
    """Crop all images and raws with one window aligned to the CFA tile.

    Images at or below ``pixel_limit`` pixels are returned unchanged.
    """
    h, w = s.shape
    if h * w <= pixel_limit:
        return s
    if crop > min(h, w):
        raise ValueError(f"crop {crop} exceeds image size {w}x{h}")
    crop -= crop % 2
    g = rngmod.stream(seed, s.spec_id, "crop")
    y0 = 2 * int(g.integers(0, (h - crop) // 2 + 1))
    x0 = 2 * int(g.integers(0, (w - crop) // 2 + 1))
    win = (slice(y0, y0 + crop), slice(x0, x0 + crop))

    def cut(a):
        return None if a is None else np.ascontiguousarray(a[win])

    return SampleSet(cut(s.i_a), cut(s.i_f), cut(s.i_fo), cut(s.t_a), cut(s.r_a),
                     s.raw_a.with_data(s.raw_a.data[win]), s.raw_f.with_data(s.raw_f.data[win]),
                     cut(s.mask), s.spec_id, cut(s.t_fo), cut(s.r_fo), cut(s.artifacts_fo))


# --------------------------------------------------------------------------
# manifests and on-disk samples

SAMPLE_FILES = ("i_a.pfm", "i_f.pfm", "i_fo.pfm", "t_a.pfm", "r_a.pfm", "raw_a.fraw", "raw_f.fraw")


@dataclass
class ManifestRecord:
    sample_id: str
    role: str
    paths: tuple[str, ...]

    def line(self) -> str:
        return "\t".join((self.sample_id, self.role, *self.paths))


@dataclass
class Manifest:
    """Tab-separated sample list; paths are relative to the manifest file."""

    records: list[ManifestRecord] = field(default_factory=list)
    root: str = "."

    def role(self, role: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.role == role]

    def resolve(self, rec: ManifestRecord) -> list[str]:
        return [os.path.join(self.root, p) for p in rec.paths]

    def to_text(self) -> str:
        recs = sorted(self.records, key=lambda r: r.sample_id)
        return "".join(r.line() + "\n" for r in recs)

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_text())

    @classmethod
    def read(cls, path: str) -> "Manifest":
        records = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2 + len(SAMPLE_FILES):
                    raise ValueError(f"{path}:{lineno}: expected {2 + len(SAMPLE_FILES)} fields, got {len(parts)}")
                if parts[1] not in ROLES:
                    raise ValueError(f"{path}:{lineno}: unknown role {parts[1]!r}")
                records.append(ManifestRecord(parts[0], parts[1], tuple(parts[2:])))
        seen = {}
        for r in records:
            if seen.setdefault(r.sample_id, r.role) != r.role:
                raise ValueError(f"{path}: sample {r.sample_id} appears in two roles")
        return cls(records, os.path.dirname(os.path.abspath(path)))


def save_sample(s: SampleSet, root: str, sample_id: str | None = None) -> tuple[str, ...]:
    """Write a sample under ``root/samples/<id>/``; returns manifest-relative paths."""
    sample_id = sample_id or s.spec_id
    rel = os.path.join("samples", sample_id)
    os.makedirs(os.path.join(root, rel), exist_ok=True)
    arrays = (s.i_a, s.i_f, s.i_fo, s.t_a, s.r_a)
    for name, arr in zip(SAMPLE_FILES[:5], arrays):
        write_pfm(os.path.join(root, rel, name), arr)
    write_fraw(os.path.join(root, rel, SAMPLE_FILES[5]), s.raw_a)
    write_fraw(os.path.join(root, rel, SAMPLE_FILES[6]), s.raw_f)
    return tuple(f"{rel}/{name}" for name in SAMPLE_FILES)


def load_sample(manifest: Manifest, rec: ManifestRecord) -> SampleSet:
    paths = manifest.resolve(rec)
    i_a, i_f, i_fo, t_a, r_a = (read_pfm(p).astype(np.float64) for p in paths[:5])
    raw_a, raw_f = read_fraw(paths[5]), read_fraw(paths[6])
    _, mask = subtract_flash_only(raw_f, raw_a)
    return SampleSet(i_a, i_f, i_fo, t_a, r_a, raw_a, raw_f, mask, rec.sample_id)


def write_dataset(samples: list[SampleSet], out_dir: str, roles: dict[str, str]) -> Manifest:
    """Store samples and a manifest at ``out_dir/manifest.tsv``."""
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for s in samples:
        paths = save_sample(s, out_dir)
        records.append(ManifestRecord(s.spec_id, roles[s.spec_id], paths))
    manifest = Manifest(records, out_dir)
    manifest.write(os.path.join(out_dir, "manifest.tsv"))
    return manifest

