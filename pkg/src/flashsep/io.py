"""File formats: FRAW raw container, PFM float images, PPM previews."""

from __future__ import annotations

import os
import re

import numpy as np

from .raw_core import CFA_PATTERNS, RawFormatError, RawImage

FRAW_MAGIC = "FRAW1"


def _fmt(x: float) -> str:
    return repr(float(x))


def encode_fraw(raw: RawImage) -> bytes:
    header = [
        FRAW_MAGIC,
        f"width {raw.width} height {raw.height}",
        f"cfa {raw.cfa}",
        f"black {raw.black_level} white {raw.white_level}",
        "wb " + " ".join(_fmt(g) for g in raw.wb_gains),
        "ccm " + " ".join(_fmt(v) for v in raw.ccm.ravel()),
        "end",
    ]
    body = raw.data.astype("<u2").tobytes(order="C")
    return ("\n".join(header) + "\n").encode("ascii") + body


def decode_fraw(buf: bytes) -> RawImage:
    lines = []
    pos = 0
    while True:
        nl = buf.find(b"\n", pos)
        if nl < 0:
            raise RawFormatError("truncated FRAW header")
        line = buf[pos:nl].decode("ascii").strip()
        pos = nl + 1
        lines.append(line)
        if line == "end":
            break
        if len(lines) > 16:
            raise RawFormatError("FRAW header has no 'end' line")

    if lines[0] != FRAW_MAGIC:
        raise RawFormatError(f"not a FRAW file (magic {lines[0]!r})")
    fields = {}
    for line in lines[1:-1]:
        key, _, rest = line.partition(" ")
        fields[key] = rest.split()
    try:
        width, height = int(fields["width"][0]), int(fields["width"][2])
        cfa = fields["cfa"][0]
        black, white = int(fields["black"][0]), int(fields["black"][2])
        wb = tuple(float(v) for v in fields["wb"])
        ccm = np.array([float(v) for v in fields["ccm"]]).reshape(3, 3)
    except (KeyError, IndexError, ValueError) as exc:
        raise RawFormatError(f"malformed FRAW header: {exc}") from exc
    if cfa not in CFA_PATTERNS:
        raise RawFormatError(f"unknown CFA pattern {cfa!r}")

    n = width * height
    body = buf[pos:]
    if len(body) != 2 * n:
        raise RawFormatError(f"expected {2 * n} payload bytes, found {len(body)}")
    data = np.frombuffer(body, dtype="<u2").reshape(height, width).astype(np.uint16)
    return RawImage(data, cfa, black, white, wb, ccm)


def write_fraw(path: str | os.PathLike, raw: RawImage) -> None:
    with open(path, "wb") as f:
        f.write(encode_fraw(raw))


def read_fraw(path: str | os.PathLike) -> RawImage:
    with open(path, "rb") as f:
        return decode_fraw(f.read())


def write_pfm(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write a float image as little-endian PFM (rows stored bottom-to-top)."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim == 2:
        tag = "Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = "PF"
    else:
        raise ValueError(f"PFM holds 1 or 3 channels, got shape {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{tag}\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.flipud(img).astype("<f4").tobytes(order="C"))


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    # three whitespace-delimited header tokens after the tag, then one byte
    m = re.match(rb"(PF|Pf)\s+(\d+)\s+(\d+)\s+(\S+)\s", buf)
    if m is None:
        raise ValueError(f"{path}: not a PFM file")
    tag, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    channels = 3 if tag == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf[m.end():], dtype=dtype, count=w * h * channels)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(data.reshape(shape)).astype(np.float32)


def to_8bit(img: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(255.0 * v + 0.5).astype(np.uint8)


def write_ppm(path: str | os.PathLike, img: np.ndarray) -> None:
    """8-bit binary preview (P6 for RGB, P5 for single channel)."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    tag = "P6" if img.ndim == 3 else "P5"
    with open(path, "wb") as f:
        f.write(f"{tag}\n{w} {h}\n255\n".encode("ascii"))
        f.write(to_8bit(img).tobytes(order="C"))


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    """Read an 8-bit P5/P6 file as floats in [0, 1]."""
    with open(path, "rb") as f:
        buf = f.read()
    m = re.match(rb"(P5|P6)\s+(\d+)\s+(\d+)\s+(\d+)\s", buf)
    if m is None:
        raise ValueError(f"{path}: not a binary PPM/PGM file")
    tag, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit files are supported")
    shape = (h, w, 3) if tag == b"P6" else (h, w)
    data = np.frombuffer(buf[m.end():], dtype=np.uint8, count=int(np.prod(shape)))
    return data.reshape(shape).astype(np.float64) / 255.0


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Load a PFM or PPM texture by extension."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".pfm":
        return read_pfm(path).astype(np.float64)
    if ext in (".ppm", ".pgm"):
        return read_ppm(path)
    raise ValueError(f"unsupported image extension {ext!r}")
