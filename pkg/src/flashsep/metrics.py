"""PSNR / SSIM and the variant evaluation report."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
INPUT_ROW = "input_ia"


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / mse)


def _window():
    r = SSIM_WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-x ** 2 / (2 * SSIM_SIGMA ** 2))
    return k / k.sum()


def _filter_valid(img, k):
    r = len(k) // 2
    out = ndimage.correlate1d(img, k, axis=0, mode="constant")
    out = ndimage.correlate1d(out, k, axis=1, mode="constant")
    return out[r:-r, r:-r]


def _ssim_plane(a, b, peak):
    k = _window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, k), _filter_valid(b, k)
    var_a = _filter_valid(a * a, k) - mu_a ** 2
    var_b = _filter_valid(b * b, k) - mu_b ** 2
    cov = _filter_valid(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, peak: float = 1.0, channel_axis: int | None = -1) -> float:
    """Structural similarity, 11x11 Gaussian window (sigma 1.5), valid positions.

    2-D inputs are treated as one plane; otherwise per-channel scores along
    ``channel_axis`` are averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        planes = [(a, b)]
    else:
        a, b = np.moveaxis(a, channel_axis, 0), np.moveaxis(b, channel_axis, 0)
        planes = list(zip(a, b))
    h, w = planes[0][0].shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}")
    return float(np.mean([_ssim_plane(pa, pb, peak) for pa, pb in planes]))


@dataclass
class EvalReport:
    variant: str
    sample_ids: list[str] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)

    def add(self, sample_id, p, s):
        self.sample_ids.append(sample_id)
        self.psnr.append(float(p))
        self.ssim.append(float(s))

    @property
    def n(self) -> int:
        return len(self.sample_ids)

    @property
    def psnr_mean(self) -> float:
        return sum(self.psnr) / self.n

    @property
    def ssim_mean(self) -> float:
        return sum(self.ssim) / self.n


def _num(x: float) -> str:
    return "inf" if math.isinf(x) else repr(float(x))


def per_sample_csv(reports: list[EvalReport]) -> str:
    rows = ["variant,sample_id,psnr,ssim"]
    for rep in reports:
        for sid, p, s in zip(rep.sample_ids, rep.psnr, rep.ssim):
            rows.append(f"{rep.variant},{sid},{_num(p)},{_num(s)}")
    return "\n".join(rows) + "\n"


def summary_csv(reports: list[EvalReport]) -> str:
    rows = ["variant,n,psnr_mean,ssim_mean"]
    rows += [f"{r.variant},{r.n},{_num(r.psnr_mean)},{_num(r.ssim_mean)}" for r in reports]
    return "\n".join(rows) + "\n"


def summary_table(reports: list[EvalReport]) -> str:
    lines = [f"{'variant':<14} {'n':>4} {'psnr_mean':>10} {'ssim_mean':>10}"]
    for r in reports:
        lines.append(f"{r.variant:<14} {r.n:>4} {r.psnr_mean:>10.4f} {r.ssim_mean:>10.4f}")
    lines.append("# lpips: not computed (requires pretrained perceptual weights)")
    return "\n".join(lines) + "\n"


def evaluate(samples, checkpoints: dict) -> list[EvalReport]:
    """Score each checkpoint's transmission estimate on prepared test samples.

    ``samples`` are dicts from :func:`flashsep.nn.prepare_sample`;
    ``checkpoints`` maps variant label to :class:`Checkpoint`.  The first
    report is the do-nothing row comparing the ambient input itself.
    """
    from .nn.model import guide_key
    from .nn.train import infer

    if not samples:
        raise ValueError("test split is empty")
    reports = [EvalReport(INPUT_ROW)]
    for s in samples:
        ia, ta = s["ia"].transpose(1, 2, 0), s["ta"].transpose(1, 2, 0)
        reports[0].add(s["id"], psnr(ia, ta), ssim(ia, ta))
    for label, ck in checkpoints.items():
        if ck is None:
            raise ValueError(f"missing checkpoint for {label}")
        rep = EvalReport(label)
        key = guide_key(ck.variant)
        for s in samples:
            t_hat, _ = infer(ck, s["ia"], s[key] if key else None)
            t_hat, ta = t_hat.transpose(1, 2, 0), s["ta"].transpose(1, 2, 0)
            rep.add(s["id"], psnr(t_hat, ta), ssim(t_hat, ta))
        reports.append(rep)
    return reports
