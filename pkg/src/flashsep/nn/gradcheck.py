"""Central finite-difference checks of the hand-written backward passes.

Everything runs in float64.  A check perturbs every parameter (and input)
entry by +-h, so keep the networks tiny.  Leaky rectifiers are not
differentiable at zero; an entry whose +-h probes flip the sign of any
rectifier input is re-probed with a step small enough to stay on one side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .model import Model, guide_key
from .unet import NetArch, UNet, init_params

DEFAULT_H = 1e-3
TOLERANCE = 1e-3


@dataclass
class GradCheckResult:
    name: str
    n_entries: int
    max_rel_error: float
    refined: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name:<24} entries={self.n_entries:<5} "
                f"max_rel_err={self.max_rel_error:.3e} refined={self.refined}")


def rel_error(a, n, floor=1e-10):
    a, n = np.asarray(a, float), np.asarray(n, float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _fd_entry(f, arr, idx, h):
    old = arr[idx]
    arr[idx] = old + h
    fp, sp = f()
    arr[idx] = old - h
    fm, sm = f()
    arr[idx] = old
    return (fp - fm) / (2 * h), sp, sm


def numeric_grad(f, arrays: dict, h=DEFAULT_H):
    """FD gradient of ``f() -> (value, kink_signature)`` w.r.t. each array, in place.

    ``kink_signature`` is a tuple of boolean arrays (sign patterns of the
    rectifier inputs) or ``()``; when the two probes disagree, the entry is
    re-estimated with progressively smaller steps.
    """
    grads, refined = {}, 0
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            step = h
            d, sp, sm = _fd_entry(f, arr, idx, step)
            while not all(np.array_equal(a, b) for a, b in zip(sp, sm)) and step > 1e-9:
                step /= 10.0
                d, sp, sm = _fd_entry(f, arr, idx, step)
                refined += 1
            g[idx] = d
        grads[name] = g
    return grads, refined


def _compare(name, analytic: dict, numeric: dict, refined=0) -> GradCheckResult:
    errs = [rel_error(analytic[k], numeric[k]).max() for k in numeric]
    n = sum(v.size for v in numeric.values())
    return GradCheckResult(name, n, float(max(errs)), refined)


# -- single layers --------------------------------------------------------

def check_conv(rng, stride=1, k=3, cin=3, cout=2, size=8, h=DEFAULT_H):
    x = rng.standard_normal((cin, size, size))
    w = rng.standard_normal((cout, cin, k, k))
    b = rng.standard_normal(cout)
    y, _ = L.conv_forward(x, w, b, stride)
    proj = rng.standard_normal(y.shape)
    f = lambda: (float(np.sum(L.conv_forward(x, w, b, stride)[0] * proj)), ())
    _, cache = L.conv_forward(x, w, b, stride)
    dx, dw, db = L.conv_backward(proj, w, cache)
    num, ref = numeric_grad(f, {"x": x, "w": w, "b": b}, h)
    return _compare(f"conv{k}x{k}_s{stride}", {"x": dx, "w": dw, "b": db}, num, ref)


def check_upconv(rng, cin=3, cout=2, size=4, h=DEFAULT_H):
    x = rng.standard_normal((cin, size, size))
    w = rng.standard_normal((cout, cin, 3, 3))
    b = rng.standard_normal(cout)
    y, cache = L.upconv_forward(x, w, b)
    proj = rng.standard_normal(y.shape)
    f = lambda: (float(np.sum(L.upconv_forward(x, w, b)[0] * proj)), ())
    dx, dw, db = L.upconv_backward(proj, w, cache)
    num, ref = numeric_grad(f, {"x": x, "w": w, "b": b}, h)
    return _compare("upsample2+conv3x3", {"x": dx, "w": dw, "b": db}, num, ref)


def check_upsample(rng, c=2, size=4, h=DEFAULT_H):
    x = rng.standard_normal((c, size, size))
    proj = rng.standard_normal((c, 2 * size, 2 * size))
    f = lambda: (float(np.sum(L.upsample2(x) * proj)), ())
    num, ref = numeric_grad(f, {"x": x}, h)
    return _compare("upsample2", {"x": L.upsample2_backward(proj)}, num, ref)


def check_leaky_relu(rng, n=64, h=DEFAULT_H):
    # keep inputs away from the kink so +-h never crosses it
    x = rng.standard_normal(n)
    x = np.where(np.abs(x) < 10 * h, x + np.sign(x + 1e-12) * 20 * h, x)
    proj = rng.standard_normal(n)
    f = lambda: (float(np.sum(L.leaky_relu(x) * proj)), (x > 0,))
    num, ref = numeric_grad(f, {"x": x}, h)
    return _compare("leaky_relu", {"x": L.leaky_relu_backward(proj, x)}, num, ref)


def check_l2(rng, shape=(3, 8, 8), h=DEFAULT_H):
    p = rng.standard_normal(shape)
    t = rng.standard_normal(shape)
    f = lambda: (L.l2_loss(p, t), ())
    num, ref = numeric_grad(f, {"pred": p}, h)
    return _compare("l2_loss", {"pred": L.l2_loss_backward(p, t)}, num, ref)


def check_concat(rng, h=DEFAULT_H):
    a = rng.standard_normal((2, 4, 4))
    b = rng.standard_normal((3, 4, 4))
    proj = rng.standard_normal((5, 4, 4))
    f = lambda: (float(np.sum(np.concatenate([a, b]) * proj)), ())
    num, ref = numeric_grad(f, {"a": a, "b": b}, h)
    return _compare("concat", {"a": proj[:2], "b": proj[2:]}, num, ref)


# -- networks ---------------------------------------------------------------

def _kink_signature(tapes):
    sig = []
    for tape in tapes:
        for _, z, _ in tape.values():
            if z is not None:
                sig.append(z > 0)
    return tuple(sig)


def check_unet(rng, channels=(2, 3, 4), in_channels=2, size=8, seed=0, h=DEFAULT_H):
    arch = NetArch(in_channels, channels)
    net = UNet(arch)
    params = init_params(arch, seed, dtype=np.float64)
    for v in params.values():
        v += 0.1 * rng.standard_normal(v.shape)  # non-zero biases
    x = rng.standard_normal((in_channels, size, size))
    target = rng.standard_normal((3, size, size))

    def f():
        y, tape = net.forward(params, x)
        return L.l2_loss(y, target), _kink_signature([tape])

    y, tape = net.forward(params, x)
    grads, dx = net.backward(params, tape, L.l2_loss_backward(y, target))
    num, ref = numeric_grad(f, {**params, "input": x}, h)
    return _compare(f"unet{list(channels)}", {**grads, "input": dx}, num, ref)


def check_model(rng, variant="two_stage_fo", channels=(2, 2, 2), size=8, seed=0,
                detach=False, h=DEFAULT_H):
    model = Model(variant, channels)
    params = model.init_params(seed, dtype=np.float64)
    for v in params.values():
        v += 0.1 * rng.standard_normal(v.shape)
    sample = {k: rng.random((3, size, size)) for k in ("ia", "ifo", "if", "ta", "ra")}

    def f():
        loss = model.loss_and_grads(params, sample, need_grads=False)[0]
        return loss, _model_signature(model, params, sample)

    if detach:
        # detaching makes R_hat a constant input of the transmission network
        key = guide_key(variant)
        r_const = model.g_R(params, sample["ia"], sample[key] if key else None).copy()

        def f():
            r_hat = model.g_R(params, sample["ia"], sample[key] if key else None)
            t_hat, tape_t = model.nets["T"].forward(params, np.concatenate([sample["ia"], r_const]))
            loss = L.l2_loss(r_hat, sample["ra"]) + L.l2_loss(t_hat, sample["ta"])
            sig = _model_signature(model, params, sample)
            return loss, sig[:len(sig) // 2] + _kink_signature([tape_t])

    _, _, grads = model.loss_and_grads(params, sample, detach)
    num, ref = numeric_grad(f, params, h)
    return _compare(f"{variant}{'_detached' if detach else ''}", grads, num, ref)


def _model_signature(model, params, sample):
    i_a = sample["ia"]
    key = guide_key(model.variant)
    guide = sample[key] if key else None
    if model.two_stage:
        r_hat, tape_r = model.nets["R"].forward(params, model.reflection_input(i_a, guide))
        _, tape_t = model.nets["T"].forward(params, np.concatenate([i_a, r_hat]))
        return _kink_signature([tape_r, tape_t])
    _, tape = model.nets["B"].forward(params, np.concatenate([i_a, guide]))
    return _kink_signature([tape])


def run_all(seed: int = 0, h: float = DEFAULT_H) -> list[GradCheckResult]:
    """Every layer type plus the composite networks."""
    rng = np.random.default_rng(seed)
    results = [
        check_conv(rng, stride=1, h=h),
        check_conv(rng, stride=2, h=h),
        check_conv(rng, stride=1, k=1, h=h),
        check_upconv(rng, h=h),
        check_upsample(rng, h=h),
        check_leaky_relu(rng, h=h),
        check_concat(rng, h=h),
        check_l2(rng, h=h),
        check_unet(rng, h=h),
    ]
    for variant in ("two_stage_fo", "single_ia", "base_fo"):
        results.append(check_model(rng, variant, seed=seed, h=h))
    results.append(check_model(rng, "two_stage_fo", seed=seed, detach=True, h=h))
    return results
