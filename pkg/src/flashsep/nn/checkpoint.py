"""Checkpoint container.

ASCII header lines::

    FSEPCKPT1
    arch channels=16,32,64 nets=R:4,T:6
    variant two_stage_fo
    seed 0
    epoch 12
    tensors 30
    end

then, per tensor in name order: uint32 name length, UTF-8 name, uint32
rank, rank x uint32 dims, little-endian float32 data.  All integers are
little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .model import Model

MAGIC = "FSEPCKPT1"


@dataclass
class Checkpoint:
    variant: str
    channels: tuple[int, ...]
    seed: int
    epoch: int
    params: dict[str, np.ndarray]

    def model(self) -> Model:
        return Model(self.variant, self.channels)


def arch_line(model: Model) -> str:
    nets = ",".join(f"{k}:{net.arch.in_channels}" for k, net in model.nets.items())
    return f"arch channels={','.join(map(str, model.channels))} nets={nets}"


def encode_checkpoint(ck: Checkpoint) -> bytes:
    model = ck.model()
    header = [MAGIC, arch_line(model), f"variant {ck.variant}", f"seed {ck.seed}",
              f"epoch {ck.epoch}", f"tensors {len(ck.params)}", "end"]
    parts = [("\n".join(header) + "\n").encode("ascii")]
    for name in sorted(ck.params):
        arr = np.asarray(ck.params[name], dtype="<f4")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)) + raw_name)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    lines = []
    pos = 0
    while not lines or lines[-1] != "end":
        nl = buf.find(b"\n", pos)
        if nl < 0 or len(lines) > 16:
            raise ValueError("malformed checkpoint header")
        lines.append(buf[pos:nl].decode("ascii"))
        pos = nl + 1
    if lines[0] != MAGIC:
        raise ValueError(f"not a checkpoint (magic {lines[0]!r})")
    fields = dict(line.split(" ", 1) for line in lines[1:-1])
    arch = dict(kv.split("=", 1) for kv in fields["arch"].split())
    channels = tuple(int(c) for c in arch["channels"].split(","))
    n = int(fields["tensors"])
    params = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + ln].decode("utf-8")
        pos += ln
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        params[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32)
        pos += 4 * count
    if pos != len(buf):
        raise ValueError(f"{len(buf) - pos} trailing bytes after tensors")
    ck = Checkpoint(fields["variant"], channels, int(fields["seed"]), int(fields["epoch"]), params)
    expected = set(ck.model().init_params(0))
    if set(params) != expected:
        raise ValueError("checkpoint tensors do not match the declared architecture")
    return ck


def save_checkpoint(path, ck: Checkpoint) -> None:
    with open(path, "wb") as f:
        f.write(encode_checkpoint(ck))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())
