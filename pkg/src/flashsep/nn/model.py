"""Network variants: the two-stage reflection-then-transmission model and baselines.

============  ==========================  ======================
variant       first network input         transmission network
============  ==========================  ======================
two_stage_fo  I_a + gray(I_fo) -> R_hat   I_a + R_hat -> T_hat
two_stage_f   I_a + gray(I_f)  -> R_hat   I_a + R_hat -> T_hat
single_ia     I_a              -> R_hat   I_a + R_hat -> T_hat
base_fo       --                          I_a + I_fo  -> T_hat
base_f        --                          I_a + I_f   -> T_hat
============  ==========================  ======================

Images are channels-first ``(3, H, W)`` display-referred arrays.
"""

from __future__ import annotations

import numpy as np

from ..isp import LUMA_WEIGHTS
from . import layers as L
from .unet import NetArch, UNet, init_params as init_unet

VARIANTS = ("two_stage_fo", "two_stage_f", "base_fo", "base_f", "single_ia")
TWO_STAGE = ("two_stage_fo", "two_stage_f", "single_ia")
DEFAULT_CHANNELS = (16, 32, 64)


def gray(img: np.ndarray) -> np.ndarray:
    """Rec. 709 luma of a channels-first RGB image, kept as one channel."""
    return np.tensordot(LUMA_WEIGHTS.astype(img.dtype), img, axes=1)[None]


def guide_key(variant: str) -> str | None:
    """Which flash-derived image a variant consumes: ``"ifo"``, ``"if"`` or None."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    if variant.endswith("_fo"):
        return "ifo"
    if variant.endswith("_f"):
        return "if"
    return None


class Model:
    """Wires one or two U-Nets for a variant.  Parameters live in a flat dict.

    Two-stage parameter names start with ``R.`` and ``T.``; the baseline's
    with ``B.``.
    """

    def __init__(self, variant: str, channels=DEFAULT_CHANNELS):
        guide_key(variant)
        self.variant = variant
        self.channels = tuple(channels)
        if variant in TWO_STAGE:
            r_in = 3 if variant == "single_ia" else 4
            self.nets = {"R": UNet(NetArch(r_in, self.channels), "R."),
                         "T": UNet(NetArch(6, self.channels), "T.")}
        else:
            self.nets = {"B": UNet(NetArch(6, self.channels), "B.")}

    @property
    def two_stage(self) -> bool:
        return "R" in self.nets

    @property
    def divisor(self) -> int:
        return 2 ** (len(self.channels) - 1)

    def describe(self) -> str:
        return "; ".join(f"{k}: {net.arch.describe()}" for k, net in self.nets.items())

    def init_params(self, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
        params = {}
        for key, net in self.nets.items():
            params.update(init_unet(net.arch, seed, net.prefix, dtype))
        return params

    # -- forward ---------------------------------------------------------

    def reflection_input(self, i_a, guide):
        if self.variant == "single_ia":
            return i_a
        return np.concatenate([i_a, gray(guide)])

    def g_R(self, params, i_a, guide):
        """Reflection estimate from the ambient image and a grayscale guide."""
        y, _ = self.nets["R"].forward(params, self.reflection_input(i_a, guide))
        return y

    def g_T(self, params, i_a, r_hat):
        """Transmission from the ambient image and the reflection estimate only."""
        y, _ = self.nets["T"].forward(params, np.concatenate([i_a, r_hat]))
        return y

    def g_B(self, params, i_a, guide):
        y, _ = self.nets["B"].forward(params, np.concatenate([i_a, guide]))
        return y

    def predict(self, params, i_a, guide=None):
        """``(T_hat, R_hat)``; ``R_hat`` is None for the single-stage baseline."""
        if self.two_stage:
            r_hat = self.g_R(params, i_a, guide)
            return self.g_T(params, i_a, r_hat), r_hat
        return self.g_B(params, i_a, guide), None

    # -- loss and gradients ---------------------------------------------

    def loss_and_grads(self, params, sample, detach_reflection=False, need_grads=True):
        """Total loss, its parts, and gradients for one sample.

        ``sample`` maps ``ia``, ``ifo``, ``if``, ``ta``, ``ra`` to images.
        The two-stage loss is ``L_R + L_T``; with ``detach_reflection`` the
        transmission loss does not reach the reflection network.
        """
        i_a = sample["ia"]
        key = guide_key(self.variant)
        guide = sample[key] if key else None
        grads = {}
        if not self.two_stage:
            net = self.nets["B"]
            t_hat, tape = net.forward(params, np.concatenate([i_a, guide]))
            loss_t = L.l2_loss(t_hat, sample["ta"])
            if need_grads:
                grads, _ = net.backward(params, tape, L.l2_loss_backward(t_hat, sample["ta"]), need_dx=False)
            return loss_t, {"T": loss_t}, grads

        net_r, net_t = self.nets["R"], self.nets["T"]
        r_hat, tape_r = net_r.forward(params, self.reflection_input(i_a, guide))
        t_hat, tape_t = net_t.forward(params, np.concatenate([i_a, r_hat]))
        loss_r = L.l2_loss(r_hat, sample["ra"])
        loss_t = L.l2_loss(t_hat, sample["ta"])
        if need_grads:
            g_t, dx_t = net_t.backward(params, tape_t, L.l2_loss_backward(t_hat, sample["ta"]),
                                       need_dx=not detach_reflection)
            d_r = L.l2_loss_backward(r_hat, sample["ra"])
            if not detach_reflection:
                d_r = d_r + dx_t[3:]
            g_r, _ = net_r.backward(params, tape_r, d_r, need_dx=False)
            grads = {**g_r, **g_t}
        return loss_r + loss_t, {"R": loss_r, "T": loss_t}, grads
