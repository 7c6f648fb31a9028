"""Physically based flash/ambient glass scenes.

Geometry is planar and fronto-parallel: a Lambertian transmission plane
behind the glass at distance ``d_t`` and a reflected plane on the camera side
at distance ``d_r``.  The flash sits at the glass.  Ambient light reaches
each plane as a uniform irradiance; flash light falls off with the inverse
square of distance, crosses (or bounces off) the glass twice, and is shaded
by the per-pixel incidence factor ``cos_map``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .isp import LUMA_WEIGHTS, IspMetadata, mosaic_plane
from .raw_core import RawImage, delinearize, subtract_flash_only

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Highlight:
    """Additive Gaussian flash highlight on the glass (flash frame only)."""

    center: tuple[float, float]
    radius: float
    strength: float


@dataclass(frozen=True, eq=False)
class SceneSpec:
    """Parametric glass scene.

    Textures are ``(H, W, 3)`` albedos in [0, 1].  Distances, ``cos_map``
    and ``occlusion`` may be scalars or ``(H, W)`` maps.  ``ambient_level``
    and ``flash_power`` are radiometric scale factors; ``reflection_gain``
    scales the ambient irradiance on the camera side of the glass relative
    to the transmission side.
    """

    albedo_t: np.ndarray
    albedo_r: np.ndarray
    r: float = 0.1
    d_t: float | np.ndarray = 1.0
    d_r: float | np.ndarray = 1.0
    flash_power: float = 1.0
    flash_color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    ambient_level: float = 1.0
    ambient_color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    reflection_gain: float = 1.0
    cos_map: float | np.ndarray = 1.0
    occlusion: float | np.ndarray = 1.0
    highlight: Highlight | None = None
    dust: np.ndarray | None = None
    noise_sigma: float = 0.0
    noise_seed: int = 0
    cfa: str = "RGGB"
    black_level: int = 64
    white_level: int = 4095
    spec_id: str = "scene"

    def __post_init__(self):
        at = np.asarray(self.albedo_t, dtype=np.float64)
        ar = np.asarray(self.albedo_r, dtype=np.float64)
        if at.ndim != 3 or at.shape[2] != 3 or at.shape != ar.shape:
            raise ValueError("albedo textures must be matching (H, W, 3) arrays")
        if at.min() < 0 or ar.min() < 0:
            raise ValueError("albedo must be non-negative")
        if not 0.0 <= self.r <= 0.5:
            raise ValueError(f"glass reflectance must lie in [0, 0.5], got {self.r}")
        for name in ("d_t", "d_r"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ValueError(f"{name} must be positive")
        for name in ("flash_power", "ambient_level", "reflection_gain", "noise_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if min(self.flash_color) < 0 or min(self.ambient_color) < 0:
            raise ValueError("light colors must be non-negative")
        cos = np.asarray(self.cos_map)
        if cos.min() < 0 or cos.max() > 1:
            raise ValueError("cos_map must lie in [0, 1]")
        object.__setattr__(self, "albedo_t", at)
        object.__setattr__(self, "albedo_r", ar)

    @property
    def t(self) -> float:
        # no absorption in the glass
        return 1.0 - self.r

    @property
    def shape(self) -> tuple[int, int]:
        return self.albedo_t.shape[:2]

    def isp_metadata(self) -> IspMetadata:
        """White balance neutralizing the ambient color, green gain 1."""
        amb = np.maximum(np.asarray(self.ambient_color, dtype=np.float64), 1e-6)
        return IspMetadata(tuple(amb[1] / amb), np.eye(3))


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Aligned linear ground truth plus the two mosaiced captures.

    ``t_fo``, ``r_fo`` and ``artifacts_fo`` are render byproducts: the
    transmission, reflection and artifact terms of the flash-only image.
    """

    i_a: np.ndarray
    i_f: np.ndarray
    i_fo: np.ndarray
    t_a: np.ndarray
    r_a: np.ndarray
    raw_a: RawImage
    raw_f: RawImage
    mask: np.ndarray
    spec_id: str = ""
    t_fo: np.ndarray | None = None
    r_fo: np.ndarray | None = None
    artifacts_fo: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.i_a.shape[:2]


def irradiance_falloff(power, d):
    """Inverse-square flash irradiance at distance ``d``."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    out = np.asarray(power, dtype=np.float64) / d ** 2
    return float(out) if out.ndim == 0 else out


def shade_lambertian(albedo, irradiance, cos):
    """Outgoing radiance of a Lambertian surface, BRDF = albedo / pi."""
    return np.asarray(albedo, dtype=np.float64) * np.asarray(irradiance, dtype=np.float64) \
        * np.asarray(cos, dtype=np.float64) / np.pi


def _as_map(x):
    x = np.asarray(x, dtype=np.float64)
    return x[..., None] if x.ndim == 2 else x


def _gaussian_blob(shape, center, radius, strength):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = center
    g = strength * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * radius ** 2))
    return np.repeat(g[:, :, None], 3, axis=2)


def mosaic(img: np.ndarray, cfa: str = "RGGB", black_level: int = 64, white_level: int = 4095,
           noise_sigma: float = 0.0, rng: np.random.Generator | None = None,
           wb_gains=(1.0, 1.0, 1.0), ccm=None, exposure_tag: str = "") -> RawImage:
    """Sample the CFA, add Gaussian read noise (normalized units), quantize."""
    plane = mosaic_plane(img, cfa)
    if noise_sigma > 0:
        if rng is None:
            raise ValueError("a generator is required when noise_sigma > 0")
        plane = plane + noise_sigma * rng.standard_normal(plane.shape)
    data = delinearize(np.clip(plane, 0.0, 1.0), black_level, white_level)
    return RawImage(data, cfa, black_level, white_level, wb_gains,
                    np.eye(3) if ccm is None else ccm, exposure_tag)


def render_components(spec: SceneSpec) -> dict[str, np.ndarray]:
    """Linear radiance terms of the scene before compositing."""
    t, r = spec.t, spec.r
    amb = spec.ambient_level * np.asarray(spec.ambient_color, dtype=np.float64)
    flash = np.asarray(spec.flash_color, dtype=np.float64)
    cos = _as_map(spec.cos_map)
    occ = _as_map(spec.occlusion)

    # ambient irradiance is already hemisphere-integrated, so no cosine term
    t_a = t * shade_lambertian(spec.albedo_t, amb, 1.0)
    r_a = r * shade_lambertian(spec.albedo_r, spec.reflection_gain * amb, 1.0)

    e_t = _as_map(irradiance_falloff(spec.flash_power, spec.d_t)) * flash
    e_r = _as_map(irradiance_falloff(spec.flash_power, spec.d_r)) * flash
    t_fo = t ** 2 * shade_lambertian(spec.albedo_t, e_t * occ, cos)
    r_fo = r ** 2 * shade_lambertian(spec.albedo_r, e_r, cos)
    t_fo = np.broadcast_to(t_fo, spec.albedo_t.shape).copy()
    r_fo = np.broadcast_to(r_fo, spec.albedo_t.shape).copy()

    artifacts = np.zeros_like(t_fo)
    if spec.highlight is not None:
        h = spec.highlight
        artifacts += _gaussian_blob(spec.shape, h.center, h.radius, h.strength)
    if spec.dust is not None:
        # dust sits on the glass, lit by the flash at the glass itself
        dust = _as_map(spec.dust)
        artifacts += dust * spec.flash_power * flash / np.pi
    return {"t_a": t_a, "r_a": r_a, "t_fo": t_fo, "r_fo": r_fo, "artifacts_fo": artifacts}


def render_scene(spec: SceneSpec) -> SampleSet:
    """Render the linear ground truth and both raw captures of a scene."""
    c = render_components(spec)
    i_a = c["t_a"] + c["r_a"]
    i_fo = c["t_fo"] + c["r_fo"] + c["artifacts_fo"]
    i_f = i_a + i_fo

    meta = spec.isp_metadata()
    raw_kw = dict(cfa=spec.cfa, black_level=spec.black_level, white_level=spec.white_level,
                  noise_sigma=spec.noise_sigma, ccm=meta.ccm)
    raw_a = mosaic(i_a, rng=rngmod.stream(spec.noise_seed, "noise", "ambient"),
                   wb_gains=meta.wb_gains, exposure_tag="ambient", **raw_kw)
    # the flash frame gets its own auto white balance under the mixed light
    raw_f = mosaic(i_f, rng=rngmod.stream(spec.noise_seed, "noise", "flash"),
                   wb_gains=gray_world_gains(i_f), exposure_tag="flash", **raw_kw)
    _, mask = subtract_flash_only(raw_f, raw_a)
    return SampleSet(i_a, i_f, i_fo, c["t_a"], c["r_a"], raw_a, raw_f, mask, spec.spec_id,
                     c["t_fo"], c["r_fo"], c["artifacts_fo"])


def gray_world_gains(img: np.ndarray) -> tuple[float, float, float]:
    """Auto white balance equalizing channel means to green."""
    means = np.maximum(np.asarray(img, dtype=np.float64).reshape(-1, 3).mean(axis=0), 1e-6)
    return tuple(float(means[1] / m) for m in means)


def mean_luma(img: np.ndarray) -> float:
    return float(np.mean(np.asarray(img) @ LUMA_WEIGHTS))


def reflection_leakage(s: SampleSet) -> float:
    """Mean luma of the flash-only reflection over that of the transmission."""
    if s.t_fo is None or s.r_fo is None:
        raise ValueError("sample carries no flash-only components")
    denom = mean_luma(s.t_fo)
    if denom <= 0:
        raise ValueError("flash-only transmission has no energy")
    return mean_luma(s.r_fo) / denom


def leakage_closed_form(spec: SceneSpec) -> float:
    """Predicted leakage for scalar distances (no occlusion, no artifacts)."""
    flash = np.asarray(spec.flash_color, dtype=np.float64)
    cos = _as_map(spec.cos_map)
    num = mean_luma(np.broadcast_to(spec.albedo_r * flash * cos, spec.albedo_r.shape))
    den = mean_luma(np.broadcast_to(spec.albedo_t * flash * cos, spec.albedo_t.shape))
    d_t, d_r = float(np.mean(spec.d_t)), float(np.mean(spec.d_r))
    return (spec.r ** 2 / spec.t ** 2) * (d_t ** 2 / d_r ** 2) * num / den


# --------------------------------------------------------------------------
# procedural textures and presets

def smooth_noise(shape, rng, scale: int = 8) -> np.ndarray:
    """Low-frequency noise in [0, 1] from bilinearly upsampled random cells."""
    from scipy import ndimage

    h, w = shape
    coarse = rng.random((h // scale + 2, w // scale + 2))
    fine = ndimage.zoom(coarse, scale, order=1)[:h, :w]
    lo, hi = fine.min(), fine.max()
    return (fine - lo) / (hi - lo + 1e-12)


def random_texture(shape, rng, n_shapes: int = 6, style: str = "blobs") -> np.ndarray:
    """Colored piecewise-smooth albedo: a tinted noise base plus shapes."""
    h, w = shape
    # natural images vary mostly in brightness with correlated channels:
    # one tint per texture, shapes differ in level plus a little chroma
    tint = rng.uniform(0.6, 1.0, 3)
    tint /= tint.max()
    tex = tint * rng.uniform(0.3, 0.6) * (0.6 + 0.4 * smooth_noise(shape, rng, scale=max(4, h // 6)))[:, :, None]
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(n_shapes):
        color = np.clip(tint * rng.uniform(0.05, 0.95) * (1.0 + 0.1 * rng.standard_normal(3)), 0.0, 1.0)
        if style == "stripes":
            angle = rng.uniform(0, np.pi)
            period = rng.uniform(6, max(6.0, min(h, w) / 2))
            phase = rng.uniform(0, period)
            proj = xx * np.cos(angle) + yy * np.sin(angle)
            m = ((proj + phase) % period) < period * rng.uniform(0.2, 0.5)
            m &= rng.random() < 0.6
        elif rng.random() < 0.5:
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            rad = rng.uniform(h / 12, h / 3)
            m = (yy - cy) ** 2 + (xx - cx) ** 2 < rad ** 2
        else:
            y0, x0 = rng.integers(0, h), rng.integers(0, w)
            y1, x1 = y0 + rng.integers(h // 8, h // 2), x0 + rng.integers(w // 8, w // 2)
            m = (yy >= y0) & (yy < y1) & (xx >= x0) & (xx < x1)
        tex = np.where(m[:, :, None], color, tex)
    return np.clip(tex, 0.0, 1.0)


PRESETS = ("standard", "strong-reflection", "weak-reflection", "far-transmission", "color-mismatch")


def random_scene(rng: np.random.Generator, preset: str = "standard", size: int = 64,
                 spec_id: str = "scene", noise_seed: int = 0, noise_sigma: float | None = None) -> SceneSpec:
    """Draw a randomized scene for one of :data:`PRESETS`."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    shape = (size, size)
    # both layers come from one texture distribution, so I_a alone is ambiguous
    albedo_t = random_texture(shape, rng, style="stripes" if rng.random() < 0.5 else "blobs")
    albedo_r = random_texture(shape, rng, style="stripes" if rng.random() < 0.5 else "blobs")

    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    d0 = rng.uniform(0.8, 1.5)
    tilt = rng.uniform(-0.2, 0.2, 2)
    d_t = d0 * (1.0 + tilt[0] * (yy - 0.5) + tilt[1] * (xx - 0.5))
    d_r = d0 * rng.uniform(1.5, 3.0)
    # flash power tuned so the flash-only transmission is comparable to ambient
    flash_power = np.pi * d0 ** 2 * rng.uniform(0.35, 0.6)
    ambient_level = np.pi * rng.uniform(0.25, 0.45)
    r = rng.uniform(0.08, 0.15)
    gain = rng.uniform(1.0, 2.0)
    ambient_tint = rng.uniform(0.85, 1.0, 3)
    ambient_tint[1] = 1.0
    ambient_color = tuple(ambient_tint)
    flash_color = tuple(rng.uniform(0.9, 1.0, 3))

    if preset == "strong-reflection":
        # reflection as bright as the transmission and a weak flash: I_a alone
        # cannot tell the layers apart and I_f is dominated by the reflection
        r = rng.uniform(0.15, 0.22)
        gain = (1.0 - r) / r * rng.uniform(0.7, 1.3)
        ambient_level = np.pi * rng.uniform(0.18, 0.3)
        flash_power = d0 ** 2 * ambient_level * rng.uniform(0.45, 0.55)
    elif preset == "weak-reflection":
        r = rng.uniform(0.04, 0.08)
        gain = rng.uniform(0.4, 0.8)
    elif preset == "far-transmission":
        d_t = d_t * 60.0
        d_r = d_r * 60.0
    elif preset == "color-mismatch":
        ambient_color = (1.0, 0.85, 0.55)
        flash_color = (0.6, 0.8, 1.0)

    cos_map = np.clip(0.75 + 0.25 * np.cos(np.pi * (xx - 0.5)) * np.cos(np.pi * (yy - 0.5)), 0, 1)
    highlight = None
    if rng.random() < 0.3:
        highlight = Highlight((rng.uniform(0, size), rng.uniform(0, size)),
                              rng.uniform(size / 24, size / 10), rng.uniform(0.1, 0.3))
    occlusion = 1.0
    if rng.random() < 0.3:
        # cast shadow: a darkened band beside one shape edge
        occ = np.ones(shape)
        y0, x0 = rng.integers(0, size // 2, 2)
        occ[y0:y0 + size // 4, x0:x0 + size // 3] = rng.uniform(0.2, 0.5)
        occlusion = occ
    if noise_sigma is None:
        noise_sigma = 0.002
    return SceneSpec(albedo_t=albedo_t, albedo_r=albedo_r, r=r, d_t=d_t, d_r=d_r,
                     flash_power=flash_power, flash_color=flash_color,
                     ambient_level=ambient_level, ambient_color=ambient_color,
                     reflection_gain=gain, cos_map=cos_map, occlusion=occlusion,
                     highlight=highlight, noise_sigma=noise_sigma, noise_seed=noise_seed,
                     spec_id=spec_id)


def warn_if_unlit(s: SampleSet) -> bool:
    """Log when the flash barely reaches the transmission plane.

    In that regime the flash-only frame is black apart from reflected flash
    and the cue carries no information about the transmission.
    """
    step = s.raw_a.quantization_step
    mean_t_fo = float(np.mean(s.t_fo)) if s.t_fo is not None else float(np.mean(s.i_fo))
    if mean_t_fo < step:
        log.warning("%s: mean flash-only transmission %.3g is below one quantization step (%.3g); "
                    "the flash does not reach the transmission plane", s.spec_id, mean_t_fo, step)
        return True
    return False


def scaled_ambient(spec: SceneSpec, k: float) -> SceneSpec:
    return replace(spec, ambient_level=spec.ambient_level * k)


# -- key = value serialization -------------------------------------------

_SCALAR_KEYS = {"r": float, "flash_power": float, "ambient_level": float, "reflection_gain": float,
                "noise_sigma": float, "noise_seed": int, "cfa": str, "black_level": int,
                "white_level": int, "spec_id": str}
_COLOR_KEYS = ("flash_color", "ambient_color")
_MAP_KEYS = ("d_t", "d_r", "cos_map", "occlusion")
_TEXTURE_KEYS = ("albedo_t", "albedo_r")
SPEC_KEYS = (*_TEXTURE_KEYS, *_SCALAR_KEYS, *_COLOR_KEYS, *_MAP_KEYS, "highlight", "dust")


def write_spec(spec: SceneSpec, path) -> None:
    """Write ``spec`` as ``key = value`` text; arrays go to PFM files beside it.

    Scalar-valued maps are written inline.  Array paths are stored relative
    to the scene file.
    """
    from . import io

    path = Path(path)
    stem = path.stem
    lines = []

    def array_ref(key, arr):
        name = f"{stem}.{key}.pfm"
        io.write_pfm(path.parent / name, np.asarray(arr, dtype=np.float32))
        return name

    for key in _TEXTURE_KEYS:
        lines.append(f"{key} = {array_ref(key, getattr(spec, key))}")
    for key, kind in _SCALAR_KEYS.items():
        v = getattr(spec, key)
        lines.append(f"{key} = {repr(float(v)) if kind is float else v}")
    for key in _COLOR_KEYS:
        lines.append(f"{key} = " + " ".join(repr(float(c)) for c in getattr(spec, key)))
    for key in _MAP_KEYS:
        v = np.asarray(getattr(spec, key), dtype=np.float64)
        lines.append(f"{key} = {repr(float(v)) if v.ndim == 0 else array_ref(key, v)}")
    h = spec.highlight
    lines.append("highlight = none" if h is None else
                 f"highlight = {h.center[0]!r} {h.center[1]!r} {h.radius!r} {h.strength!r}")
    lines.append("dust = none" if spec.dust is None else f"dust = {array_ref('dust', spec.dust)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_key_values(text: str, source: str = "<text>") -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{n}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def read_spec(path) -> SceneSpec:
    """Inverse of :func:`write_spec`.

    Textures may be PFM (linear albedo) or PPM (display-referred, decoded
    with a 2.2 power law).  Unknown keys are an error.
    """
    from . import io

    path = Path(path)
    kv = parse_key_values(path.read_text(encoding="utf-8"), str(path))
    unknown = sorted(set(kv) - set(SPEC_KEYS))
    if unknown:
        raise ValueError(f"{path}: unknown spec keys: {', '.join(unknown)}")
    missing = [k for k in _TEXTURE_KEYS if k not in kv]
    if missing:
        raise ValueError(f"{path}: missing required keys: {', '.join(missing)}")

    def load(ref):
        p = path.parent / ref
        img = io.read_image(p)
        if p.suffix.lower() in (".ppm", ".pgm"):
            img = np.power(img, 2.2)
        return img

    def number_or_map(ref):
        try:
            return float(ref)
        except ValueError:
            return load(ref)

    args = {k: load(kv[k]) for k in _TEXTURE_KEYS}
    for key, kind in _SCALAR_KEYS.items():
        if key in kv:
            args[key] = kind(kv[key])
    for key in _COLOR_KEYS:
        if key in kv:
            vals = tuple(float(x) for x in kv[key].split())
            if len(vals) != 3:
                raise ValueError(f"{path}: {key} needs 3 values")
            args[key] = vals
    for key in _MAP_KEYS:
        if key in kv:
            args[key] = number_or_map(kv[key])
    if kv.get("highlight", "none") != "none":
        vals = [float(x) for x in kv["highlight"].split()]
        if len(vals) != 4:
            raise ValueError(f"{path}: highlight needs 'cy cx radius strength'")
        args["highlight"] = Highlight((vals[0], vals[1]), vals[2], vals[3])
    if kv.get("dust", "none") != "none":
        args["dust"] = load(kv["dust"])
    return SceneSpec(**args)
