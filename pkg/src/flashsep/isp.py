"""A minimal ISP: demosaic, white balance, color correction, gamma.

Every stage clamps to [0, 1].  Images are channels-last float arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .raw_core import RawImage, cfa_channel_map, linearize

LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])

# sRGB transfer constants
_SRGB_KNEE = 0.0031308
_SRGB_DECODE_KNEE = 12.92 * _SRGB_KNEE

_KERNEL_RB = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 4.0
_KERNEL_G = np.array([[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]]) / 4.0


@dataclass(frozen=True)
class IspMetadata:
    """Color metadata shared by every frame developed from one ambient capture.

    ``gamma`` is either ``"srgb"`` for the piecewise sRGB curve or a positive
    float for a pure power law.
    """

    wb_gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    ccm: np.ndarray = field(default_factory=lambda: np.eye(3))
    gamma: str | float = "srgb"

    def __post_init__(self):
        gains = tuple(float(g) for g in self.wb_gains)
        if len(gains) != 3 or min(gains) <= 0:
            raise ValueError(f"white-balance gains must be positive, got {gains}")
        object.__setattr__(self, "wb_gains", gains)
        object.__setattr__(self, "ccm", np.array(self.ccm, dtype=np.float64).reshape(3, 3))
        if self.gamma != "srgb" and not float(self.gamma) > 0:
            raise ValueError(f"power-law gamma must be positive, got {self.gamma}")

    @classmethod
    def from_raw(cls, raw: RawImage, gamma: str | float = "srgb") -> "IspMetadata":
        return cls(raw.wb_gains, raw.ccm, gamma)


def demosaic(plane: np.ndarray, cfa: str) -> np.ndarray:
    """Bilinear demosaic of a Bayer plane into ``(H, W, 3)``.

    Borders are mirrored about the edge photosite, which keeps the CFA phase,
    so native samples are reproduced exactly everywhere.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ValueError("demosaic expects a single Bayer plane")
    h, w = plane.shape
    if h % 2 or w % 2:
        raise ValueError(f"Bayer plane dimensions must be even, got {w}x{h}")
    chan = cfa_channel_map(cfa, h, w)
    out = np.empty((h, w, 3))
    for c in range(3):
        sparse = np.where(chan == c, plane, 0.0)
        kernel = _KERNEL_G if c == 1 else _KERNEL_RB
        out[:, :, c] = ndimage.correlate(sparse, kernel, mode="mirror")
    return out


def mosaic_plane(img: np.ndarray, cfa: str) -> np.ndarray:
    """Sample one channel per photosite from an RGB image (no quantization)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    chan = cfa_channel_map(cfa, h, w)
    return np.take_along_axis(img, chan[:, :, None], axis=2)[:, :, 0]


def white_balance(img: np.ndarray, gains) -> np.ndarray:
    gains = np.asarray(gains, dtype=np.float64)
    if gains.shape != (3,) or np.any(gains <= 0):
        raise ValueError(f"white-balance gains must be three positive numbers, got {gains}")
    return np.clip(np.asarray(img, dtype=np.float64) * gains, 0.0, 1.0)


def color_correct(img: np.ndarray, ccm) -> np.ndarray:
    ccm = np.asarray(ccm, dtype=np.float64)
    if ccm.shape != (3, 3) or not np.all(np.isfinite(ccm)):
        raise ValueError("color matrix must be a finite 3x3 array")
    if np.abs(ccm.sum(axis=1) - 1.0).max() > 1e-4:
        raise ValueError("color matrix rows must each sum to 1")
    return np.clip(np.asarray(img, dtype=np.float64) @ ccm.T, 0.0, 1.0)


def gamma_encode(img: np.ndarray, gamma: str | float = "srgb") -> np.ndarray:
    x = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if gamma != "srgb":
        return x ** (1.0 / float(gamma))
    return np.where(x <= _SRGB_KNEE, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def gamma_decode(img: np.ndarray, gamma: str | float = "srgb") -> np.ndarray:
    y = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if gamma != "srgb":
        return y ** float(gamma)
    return np.where(y <= _SRGB_DECODE_KNEE, y / 12.92, np.power((y + 0.055) / 1.055, 2.4))


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Rec. 709 luma of a ``(..., 3)`` image."""
    img = np.asarray(img)
    if img.shape[-1] != 3:
        raise ValueError("grayscale conversion expects 3 channels")
    return img @ LUMA_WEIGHTS.astype(img.dtype)


def finish(rgb_linear: np.ndarray, meta: IspMetadata) -> np.ndarray:
    """Color stages shared by all frames: white balance, CCM, gamma."""
    x = white_balance(rgb_linear, meta.wb_gains)
    x = color_correct(x, meta.ccm)
    return gamma_encode(x, meta.gamma)


def develop_plane(plane: np.ndarray, cfa: str, meta: IspMetadata) -> np.ndarray:
    """ISP from an already-linearized Bayer plane (e.g. a flash-only plane)."""
    return finish(demosaic(plane, cfa), meta)


def run_isp(raw: RawImage, meta: IspMetadata | None = None) -> np.ndarray:
    """Develop a raw frame to display-referred RGB.

    Pass the ambient frame's metadata when developing a flash-only or
    transmission frame, which has none of its own.
    """
    if meta is None:
        meta = IspMetadata.from_raw(raw)
    return develop_plane(linearize(raw), raw.cfa, meta)
