"""End-to-end pipelines shared by the command line and the test suite."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from . import rng as rngmod
from .data_synth import (DEFAULT_SPLIT, Manifest, build_synthetic, load_sample, split_dataset,
                         synthetic_sources, write_dataset)
from .metrics import evaluate, per_sample_csv, summary_csv, summary_table
from .nn import TrainConfig, load_checkpoint, prepare_sample, save_checkpoint, train
from .nn.model import VARIANTS
from .scene_sim import random_scene, render_scene, warn_if_unlit

log = logging.getLogger(__name__)

THREADS_ENV = "FLASHSEP_THREADS"
TOY_LEARNING_RATE = 1e-3


def worker_count(jobs: int) -> int:
    """Process count from ``FLASHSEP_THREADS`` (0 or unset = one per CPU)."""
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError(f"{THREADS_ENV} must be >= 0")
    if n == 0:
        n = os.cpu_count() or 1
    return max(1, min(n, jobs))


def simulate(preset: str, count: int, seed: int, size: int = 64, noise_sigma=None, warn=True):
    """``count`` rendered scenes; scene ``i`` depends only on ``(seed, i)``."""
    out = []
    for i in range(count):
        spec = random_scene(rngmod.stream(seed, "scene", i), preset, size, spec_id=f"sim{i:05d}",
                            noise_seed=rngmod.child_seed(seed, "noise", i), noise_sigma=noise_sigma)
        s = render_scene(spec)
        if warn:
            warn_if_unlit(s)
        out.append(s)
    return out


def synthesize(count: int, seed: int, size: int = 64, **kw):
    """Composited pairs plus the source keys used for source-disjoint splits."""
    src = synthetic_sources(count, seed, size, **kw)
    return build_synthetic(src), {s.sample_id: s.sources for s in src}


def make_dataset(samples, out_dir, seed, proportions=DEFAULT_SPLIT, sources=None) -> Manifest:
    roles = split_dataset([s.spec_id for s in samples], proportions, seed, sources)
    return write_dataset(samples, out_dir, roles)


def load_prepared(manifest: Manifest, role: str):
    return [prepare_sample(load_sample(manifest, rec)) for rec in sorted(manifest.role(role), key=lambda r: r.sample_id)]


def _train_job(args):
    tr, va, variant, config = args
    return train(tr, va, variant, config)


def train_many(jobs, workers: int | None = None):
    """Run ``(train, val, variant, config)`` jobs, possibly in parallel.

    Each job is a deterministic single-threaded loop, so the result does
    not depend on the worker count.
    """
    jobs = list(jobs)
    workers = worker_count(len(jobs)) if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [_train_job(j) for j in jobs]
    saved = {k: os.environ.get(k) for k in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")}
    os.environ.update({k: "1" for k in saved})
    try:
        import multiprocessing as mp
        with ProcessPoolExecutor(workers, mp_context=mp.get_context("spawn")) as pool:
            return list(pool.map(_train_job, jobs))
    finally:
        for k, v in saved.items():
            if v is None:
                os.environ.pop(k, None)
            else:
                os.environ[k] = v


@dataclass(frozen=True)
class AblationConfig:
    preset: str = "strong-reflection"
    source: str = "simulate"
    count: int = 128
    size: int = 64
    seed: int = 0
    proportions: tuple[float, float, float] = DEFAULT_SPLIT
    variants: tuple[str, ...] = VARIANTS
    train: TrainConfig = TrainConfig(epochs=40, learning_rate=TOY_LEARNING_RATE, lr_schedule="cosine")

    @classmethod
    def tiny(cls, seed: int = 0) -> "AblationConfig":
        return cls(count=32, seed=seed, train=TrainConfig(epochs=3, learning_rate=TOY_LEARNING_RATE,
                                                          lr_schedule="cosine", seed=seed))

    def lines(self) -> list[str]:
        t = self.train
        return [f"preset = {self.preset}", f"source = {self.source}", f"count = {self.count}",
                f"size = {self.size}", f"seed = {self.seed}",
                "proportions = " + " ".join(repr(p) for p in self.proportions),
                "variants = " + ",".join(self.variants), f"epochs = {t.epochs}",
                f"batch_size = {t.batch_size}", f"lr = {t.learning_rate!r}",
                f"lr_schedule = {t.lr_schedule}",
                f"train_seed = {t.seed}", "channels = " + ",".join(map(str, t.channels)),
                f"detach = {str(t.detach_reflection).lower()}"]


def run_ablation(cfg: AblationConfig, out_dir: str, workers: int | None = None):
    """Data -> split -> train every variant -> evaluate; returns the reports.

    Layout under ``out_dir``: ``data/`` (samples + manifest.tsv),
    ``checkpoints/<variant>.ckpt``, ``logs/<variant>.csv`` and
    ``eval/{per_sample.csv,summary.csv,summary.txt}``.  A variant whose
    checkpoint and loss log already exist is not retrained.
    """
    os.makedirs(out_dir, exist_ok=True)
    data_dir = os.path.join(out_dir, "data")
    manifest_path = os.path.join(data_dir, "manifest.tsv")
    if os.path.exists(manifest_path):
        manifest = Manifest.read(manifest_path)
    else:
        if cfg.source == "simulate":
            samples, sources = simulate(cfg.preset, cfg.count, cfg.seed, cfg.size), None
        elif cfg.source == "synth":
            samples, sources = synthesize(cfg.count, cfg.seed, cfg.size, preset=cfg.preset)
        else:
            raise ValueError(f"unknown data source {cfg.source!r}")
        manifest = make_dataset(samples, data_dir, cfg.seed, cfg.proportions, sources)
    tr, va, te = (load_prepared(manifest, r) for r in ("train", "val", "test"))

    ck_dir, log_dir = os.path.join(out_dir, "checkpoints"), os.path.join(out_dir, "logs")
    os.makedirs(ck_dir, exist_ok=True)
    os.makedirs(log_dir, exist_ok=True)
    todo = [v for v in cfg.variants
            if not (os.path.exists(os.path.join(ck_dir, f"{v}.ckpt"))
                    and os.path.exists(os.path.join(log_dir, f"{v}.csv")))]
    for v, res in zip(todo, train_many([(tr, va, v, cfg.train) for v in todo], workers)):
        save_checkpoint(os.path.join(ck_dir, f"{v}.ckpt"), res.checkpoint)
        with open(os.path.join(log_dir, f"{v}.csv"), "w", encoding="utf-8", newline="\n") as f:
            f.write(res.loss_csv())
        log.info("trained %s: best epoch %d", v, res.checkpoint.epoch)

    cks = {v: load_checkpoint(os.path.join(ck_dir, f"{v}.ckpt")) for v in cfg.variants}
    reports = evaluate(te, cks)
    write_reports(reports, os.path.join(out_dir, "eval"))
    return reports


def write_reports(reports, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for name, text in (("per_sample.csv", per_sample_csv(reports)),
                       ("summary.csv", summary_csv(reports)),
                       ("summary.txt", summary_table(reports))):
        with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="\n") as f:
            f.write(text)


def with_train(cfg: AblationConfig, **kw) -> AblationConfig:
    return replace(cfg, train=replace(cfg.train, **kw))
