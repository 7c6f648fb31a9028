"""Raw-domain arithmetic: linearization, flash-only subtraction, saturation.

Linear images are plain float arrays in [0, 1]; a Bayer plane is ``(H, W)``
and an RGB image is ``(H, W, 3)``.  Raw frames carry their levels and ISP
metadata in :class:`RawImage`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CFA_PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG")
DEFAULT_GUARD_BAND = 16

_CHANNEL_INDEX = {"R": 0, "G": 1, "B": 2}


class RawFormatError(ValueError):
    """A raw frame violates its own invariants."""


class FrameMismatchError(ValueError):
    """Two raw frames cannot be combined; ``field`` names the offending header field."""

    def __init__(self, field_name: str, a, b):
        self.field = field_name
        super().__init__(f"{field_name} mismatch: {a!r} vs {b!r}")


@dataclass(frozen=True, eq=False)
class RawImage:
    """A mosaiced sensor frame.

    ``data`` is a ``(height, width)`` uint16 array, one value per photosite.
    The array is made read-only on construction.
    """

    data: np.ndarray
    cfa: str = "RGGB"
    black_level: int = 64
    white_level: int = 4095
    wb_gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    ccm: np.ndarray = field(default_factory=lambda: np.eye(3))
    exposure_tag: str = ""

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise RawFormatError(f"raw data must be 2-D, got shape {data.shape}")
        if data.dtype != np.uint16:
            if data.size and (data.min() < 0 or data.max() > 65535):
                raise RawFormatError("raw values must fit in uint16")
            data = data.astype(np.uint16)
        else:
            data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

        h, w = data.shape
        if h % 2 or w % 2:
            raise RawFormatError(f"raw dimensions must be even, got {w}x{h}")
        if self.cfa not in CFA_PATTERNS:
            raise RawFormatError(f"unknown CFA pattern {self.cfa!r}")
        if not 0 <= self.black_level < self.white_level <= 65535:
            raise RawFormatError(
                f"need 0 <= black < white <= 65535, got black={self.black_level} white={self.white_level}")

        gains = tuple(float(g) for g in self.wb_gains)
        if len(gains) != 3 or min(gains) <= 0:
            raise RawFormatError(f"white-balance gains must be three positive numbers, got {gains}")
        object.__setattr__(self, "wb_gains", gains)

        ccm = np.array(self.ccm, dtype=np.float64).reshape(3, 3)
        if np.abs(ccm.sum(axis=1) - 1.0).max() > 1e-4:
            raise RawFormatError("color matrix rows must each sum to 1")
        ccm.flags.writeable = False
        object.__setattr__(self, "ccm", ccm)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def quantization_step(self) -> float:
        return 1.0 / (self.white_level - self.black_level)

    def with_data(self, data: np.ndarray) -> "RawImage":
        """Same header, new photosite values."""
        return RawImage(data, self.cfa, self.black_level, self.white_level,
                        self.wb_gains, self.ccm, self.exposure_tag)


def cfa_channel_map(cfa: str, height: int, width: int) -> np.ndarray:
    """Per-photosite channel index (0=R, 1=G, 2=B) for a CFA layout."""
    tile = np.array([[_CHANNEL_INDEX[cfa[0]], _CHANNEL_INDEX[cfa[1]]],
                     [_CHANNEL_INDEX[cfa[2]], _CHANNEL_INDEX[cfa[3]]]])
    return np.tile(tile, (height // 2, width // 2))


def linearize(raw: RawImage) -> np.ndarray:
    """Map raw counts to [0, 1] using the frame's black and white levels."""
    if raw.black_level >= raw.white_level:
        raise RawFormatError("black level must be below white level")
    span = raw.white_level - raw.black_level
    out = (raw.data.astype(np.float64) - raw.black_level) / span
    return np.clip(out, 0.0, 1.0)


def delinearize(plane: np.ndarray, black_level: int, white_level: int) -> np.ndarray:
    """Quantize a [0, 1] plane back to raw counts (round half up)."""
    plane = np.asarray(plane, dtype=np.float64)
    counts = np.floor(black_level + plane * (white_level - black_level) + 0.5)
    return np.clip(counts, 0, 65535).astype(np.uint16)


def saturation_mask(raw: RawImage, guard_band: int = DEFAULT_GUARD_BAND) -> np.ndarray:
    """Boolean validity map: True where the photosite is safely below white."""
    return raw.data.astype(np.int64) < raw.white_level - guard_band


def check_compatible(a: RawImage, b: RawImage) -> None:
    """Raise :class:`FrameMismatchError` unless two frames share geometry and levels."""
    if a.data.shape != b.data.shape:
        raise FrameMismatchError("dimensions", a.data.shape[::-1], b.data.shape[::-1])
    if a.cfa != b.cfa:
        raise FrameMismatchError("cfa", a.cfa, b.cfa)
    if a.black_level != b.black_level:
        raise FrameMismatchError("black", a.black_level, b.black_level)
    if a.white_level != b.white_level:
        raise FrameMismatchError("white", a.white_level, b.white_level)


def subtract_flash_only(i_f: RawImage, i_a: RawImage,
                        guard_band: int = DEFAULT_GUARD_BAND) -> tuple[np.ndarray, np.ndarray]:
    """Flash-only Bayer plane from a flash frame and its ambient twin.

    Returns ``(plane, valid)``.  The difference is taken in linear space and
    negative values (noise) are clamped to zero.  ``valid`` is False wherever
    either input is within ``guard_band`` counts of white.
    """
    check_compatible(i_f, i_a)
    plane = np.clip(linearize(i_f) - linearize(i_a), 0.0, 1.0)
    valid = saturation_mask(i_f, guard_band) & saturation_mask(i_a, guard_band)
    return plane, valid
