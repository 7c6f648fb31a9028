"""Training loop, data preparation and inference."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .. import rng as rngmod
from ..isp import IspMetadata, develop_plane, mosaic_plane, run_isp
from ..raw_core import subtract_flash_only
from .checkpoint import Checkpoint
from .model import Model
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


LR_SCHEDULES = ("constant", "cosine")


def epoch_lr(config, epoch: int) -> float:
    """Learning rate used throughout ``epoch`` (1-based)."""
    if config.lr_schedule == "cosine" and config.epochs > 0:
        return config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * (epoch - 1) / config.epochs))
    return config.learning_rate


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 1
    learning_rate: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    channels: tuple[int, ...] = (16, 32, 64)
    detach_reflection: bool = False
    lr_schedule: str = "constant"

    def __post_init__(self):
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0 or self.eps <= 0 or not all(0 <= b < 1 for b in self.betas):
            raise ValueError("invalid optimizer hyperparameters")


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    final_params: dict[str, np.ndarray]
    initial_params: dict[str, np.ndarray]
    history: list[tuple[int, float, float]] = field(default_factory=list)

    def loss_csv(self) -> str:
        rows = ["epoch,train_loss,val_loss"]
        rows += [f"{e},{tr:.9g},{va:.9g}" for e, tr, va in self.history]
        return "\n".join(rows) + "\n"


def develop_inputs(raw_a, raw_f, dtype=np.float32) -> dict[str, np.ndarray]:
    """Channels-first network inputs ``ia``, ``if`` and ``ifo`` from a raw pair.

    The ambient and flash frames are developed with their own metadata; the
    flash-only frame has none and borrows the ambient frame's.
    """
    meta = IspMetadata.from_raw(raw_a)
    fo_plane, _ = subtract_flash_only(raw_f, raw_a)
    imgs = {"ia": run_isp(raw_a, meta), "if": run_isp(raw_f),
            "ifo": develop_plane(fo_plane, raw_a.cfa, meta)}
    return {k: np.ascontiguousarray(v.transpose(2, 0, 1), dtype=dtype) for k, v in imgs.items()}


def prepare_sample(s, dtype=np.float32) -> dict:
    """Network inputs and targets for one :class:`SampleSet`.

    Targets are the linear ground-truth layers pushed through the same CFA
    sampling and the ambient frame's ISP, as if captured in raw.
    """
    out = develop_inputs(s.raw_a, s.raw_f, dtype)
    meta, cfa = IspMetadata.from_raw(s.raw_a), s.raw_a.cfa
    for key, linear in (("ta", s.t_a), ("ra", s.r_a)):
        img = develop_plane(mosaic_plane(linear, cfa), cfa, meta)
        out[key] = np.ascontiguousarray(img.transpose(2, 0, 1), dtype=dtype)
    out["id"] = s.spec_id
    return out


def mean_loss(model: Model, params, samples, part="T") -> float:
    if not samples:
        return float("nan")
    vals = [model.loss_and_grads(params, s, need_grads=False)[1][part] for s in samples]
    return float(np.mean(vals))


def _check_finite(value, where):
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss {value} at {where}; lower the learning rate or inspect inputs")


def train(train_samples, val_samples, variant: str, config: TrainConfig = TrainConfig(),
          progress=None) -> TrainResult:
    """Fit a variant with Adam; keeps the parameters with the lowest validation L_T.

    ``history`` has one row per epoch, starting with epoch 0 at the
    initial parameters: ``(epoch, train_loss, val_loss)`` where the train
    loss is the full objective averaged over the epoch's steps and the
    validation loss is L_T.
    """
    if not train_samples:
        raise TrainingError("no training samples")
    if not val_samples:
        raise TrainingError("no validation samples")
    model = Model(variant, config.channels)
    params = model.init_params(config.seed)
    initial = {k: v.copy() for k, v in params.items()}
    state = AdamState.zeros_like(params)

    train0 = float(np.mean([model.loss_and_grads(params, s, need_grads=False)[0] for s in train_samples]))
    val0 = mean_loss(model, params, val_samples)
    _check_finite(train0, "initialization")
    history = [(0, train0, val0)]
    best = (val0, 0, initial)

    for epoch in range(1, config.epochs + 1):
        order = rngmod.stream(config.seed, "order", epoch).permutation(len(train_samples))
        lr = epoch_lr(config, epoch)
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_samples[i] for i in order[start:start + config.batch_size]]
            acc = None
            for s in batch:
                loss, _, grads = model.loss_and_grads(params, s, config.detach_reflection)
                _check_finite(loss, f"epoch {epoch}, sample {s.get('id', '?')}")
                losses.append(loss)
                if acc is None:
                    acc = grads
                else:
                    acc = {k: acc[k] + grads[k] for k in acc}
            if len(batch) > 1:
                acc = {k: g / len(batch) for k, g in acc.items()}
            params, state = adam_step(params, acc, state, lr, config.betas, config.eps)
        val = mean_loss(model, params, val_samples)
        _check_finite(val, f"epoch {epoch} validation")
        history.append((epoch, float(np.mean(losses)), val))
        if val < best[0]:
            best = (val, epoch, params)
        if progress is not None:
            progress(epoch, history[-1])
        log.debug("%s epoch %d train %.6g val %.6g", variant, epoch, history[-1][1], val)

    ck = Checkpoint(variant, tuple(config.channels), config.seed, best[1],
                    {k: v.astype(np.float32) for k, v in best[2].items()})
    return TrainResult(ck, params, initial, history)


def _pad_to(img, divisor):
    _, h, w = img.shape
    ph, pw = (-h) % divisor, (-w) % divisor
    if not ph and not pw:
        return img
    return np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="reflect" if min(h, w) > 1 else "edge")


def infer(ck: Checkpoint, i_a, guide=None):
    """``(T_hat, R_hat)`` in [0, 1] for channels-first inputs of any size.

    Inputs are reflect-padded to the network's divisibility and outputs are
    cropped back.  ``guide`` is the flash-only (or flash) image the variant
    expects; ignored by ``single_ia``.
    """
    model = ck.model()
    _, h, w = i_a.shape
    xa = _pad_to(np.asarray(i_a, np.float32), model.divisor)
    xg = None if guide is None else _pad_to(np.asarray(guide, np.float32), model.divisor)
    if model.variant != "single_ia" and xg is None:
        raise ValueError(f"variant {model.variant} needs a guide image")
    t_hat, r_hat = model.predict(ck.params, xa, xg)
    t_hat = np.clip(t_hat[:, :h, :w], 0.0, 1.0)
    if r_hat is not None:
        r_hat = np.clip(r_hat[:, :h, :w], 0.0, 1.0)
    return t_hat, r_hat
