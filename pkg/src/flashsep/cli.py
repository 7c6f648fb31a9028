"""``flashsep`` command line.

Every verb accepts ``--config FILE`` with ``key = value`` lines whose keys
are the verb's long flag names (dashes or underscores); flags given on the
command line win.  The fully resolved configuration is written next to the
outputs as ``run_config.txt``.

Exit codes: 0 success, 1 runtime failure, 2 validation failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

log = logging.getLogger("flashsep")

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class ValidationError(ValueError):
    pass


# -- argument types --------------------------------------------------------

def _floats(n):
    def parse(text):
        vals = [float(x) for x in str(text).replace(",", " ").split()]
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} numbers, got {text!r}")
        return tuple(vals)
    parse.__name__ = f"{n} floats"
    return parse


def _ints(text):
    try:
        return tuple(int(x) for x in str(text).replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _names(text):
    return tuple(x for x in str(text).replace(",", " ").split() if x)


# -- parser ------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    from .data_synth import DEFAULT_SPLIT
    from .nn.model import VARIANTS
    from .scene_sim import PRESETS

    p = _Parser(prog="flashsep", description="Reflection removal with flash-only cues.")
    p.add_argument("--log-level", default="INFO", choices=LOG_LEVELS)
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def verb(name, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--config", help="key = value file; flags override it")
        sp.add_argument("--log-level", default=argparse.SUPPRESS, choices=LOG_LEVELS)
        return sp

    sp = verb("flashonly", "Subtract an ambient raw from a flash raw.")
    sp.add_argument("--ambient", required=True)
    sp.add_argument("--flash", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--guard-band", type=int, default=16)

    sp = verb("simulate", "Render simulator scenes to a dataset directory.")
    sp.add_argument("--spec", help="scene spec file (renders exactly one scene)")
    sp.add_argument("--preset", choices=PRESETS, default="standard")
    sp.add_argument("--count", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--noise-sigma", type=float)
    sp.add_argument("--proportions", type=_floats(3), default=DEFAULT_SPLIT)
    sp.add_argument("--out-dir", required=True)

    sp = verb("synth", "Composite synthetic reflection pairs in linear space.")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--count", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--alpha-range", type=_floats(2), default=(0.3, 0.9))
    sp.add_argument("--blur-sigma-range", type=_floats(2), default=(1.0, 4.0))
    sp.add_argument("--sharp-fraction", type=float, default=0.2)
    sp.add_argument("--proportions", type=_floats(3), default=DEFAULT_SPLIT)

    sp = verb("train", "Train one variant on a manifest's train/val split.")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--variant", choices=VARIANTS, default="two_stage_fo")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--epochs", type=int, default=150)
    sp.add_argument("--batch-size", type=int, default=1)
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--lr-schedule", choices=("constant", "cosine"), default="constant")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--channels", type=_ints, default=(16, 32, 64))
    sp.add_argument("--detach", type=_bool, default=False, nargs="?", const=True,
                    help="stop L_T gradients at the reflection estimate")

    sp = verb("infer", "Estimate transmission and reflection from a raw pair.")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--ambient", required=True)
    sp.add_argument("--flash")
    sp.add_argument("--out-dir", required=True)

    sp = verb("eval", "Score checkpoints on a manifest's test split.")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--checkpoints", type=_names, required=True,
                    help="checkpoint paths; the row label is each file's variant")
    sp.add_argument("--role", choices=("train", "val", "test"), default="test")
    sp.add_argument("--out-dir", required=True)

    sp = verb("gradcheck", "Finite-difference check of every layer and the composite networks.")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--h", type=float, default=1e-3)
    sp.add_argument("--out-dir")

    sp = verb("ablate", "Simulate, split, train every variant and evaluate.")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--tiny", type=_bool, default=False, nargs="?", const=True,
                    help="32 samples, 3 epochs")
    sp.add_argument("--preset", choices=PRESETS, default="strong-reflection")
    sp.add_argument("--source", choices=("simulate", "synth"), default="simulate")
    sp.add_argument("--count", type=int)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--train-seed", type=int, help="weight init and sample order (default: --seed)")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--lr-schedule", choices=("constant", "cosine"))
    sp.add_argument("--variants", type=_names, default=VARIANTS)
    sp.add_argument("--channels", type=_ints, default=(16, 32, 64))
    sp.add_argument("--proportions", type=_floats(3), default=DEFAULT_SPLIT)
    return p


def _subparser(parser, verb):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[verb]
    raise KeyError(verb)


def _apply_config(sp: argparse.ArgumentParser, path: str) -> None:
    from .scene_sim import parse_key_values

    with open(path, encoding="utf-8") as f:
        kv = parse_key_values(f.read(), path)
    actions = {a.dest: a for a in sp._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, text in kv.items():
        dest = key.replace("-", "_")
        if dest not in actions:
            raise ValidationError(f"{path}: unknown key {key!r}")
        a = actions[dest]
        conv = a.type or str
        try:
            value = conv(text)
        except (argparse.ArgumentTypeError, ValueError) as e:
            raise ValidationError(f"{path}: bad value for {key}: {e}") from None
        if a.choices is not None and value not in a.choices:
            raise ValidationError(f"{path}: {key} must be one of {', '.join(map(str, a.choices))}")
        defaults[dest] = value
        a.required = False
    sp.set_defaults(**defaults)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv) if not any(a.startswith("--config") for a in argv) else None
    if args is None:
        # first pass only to find the verb and config path
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--log-level")
        pre.add_argument("verb")
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv)
        if known.config:
            _apply_config(_subparser(parser, known.verb), known.config)
        args = parser.parse_args(argv)
    return args


def _fmt(v):
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_run_config(out_dir: str, args, extra: dict | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    items = {k: v for k, v in sorted(vars(args).items()) if k not in ("config", "log_level")}
    items.update(extra or {})
    with open(os.path.join(out_dir, "run_config.txt"), "w", encoding="utf-8", newline="\n") as f:
        f.write("".join(f"{k} = {_fmt(v)}\n" for k, v in items.items()))


# -- verbs -------------------------------------------------------------------

def cmd_flashonly(args):
    from . import io
    from .isp import IspMetadata, color_correct, demosaic, finish, white_balance
    from .raw_core import subtract_flash_only

    raw_a, raw_f = io.read_fraw(args.ambient), io.read_fraw(args.flash)
    plane, valid = subtract_flash_only(raw_f, raw_a, args.guard_band)
    meta = IspMetadata.from_raw(raw_a)
    rgb = color_correct(white_balance(demosaic(plane, raw_a.cfa), meta.wb_gains), meta.ccm)
    out = args.out_dir
    write_run_config(out, args)
    io.write_pfm(os.path.join(out, "i_fo_bayer.pfm"), plane.astype(np.float32))
    io.write_pfm(os.path.join(out, "i_fo.pfm"), rgb.astype(np.float32))
    io.write_ppm(os.path.join(out, "mask.pgm"), valid.astype(np.float64))
    io.write_ppm(os.path.join(out, "i_fo_preview.ppm"), finish(rgb, IspMetadata((1, 1, 1), np.eye(3), meta.gamma)))
    log.info("flash-only image: %dx%d, %d invalid photosites", plane.shape[1], plane.shape[0],
             int(valid.size - valid.sum()))
    return EXIT_OK


def cmd_simulate(args):
    from .data_synth import write_dataset, split_dataset
    from .pipeline import simulate
    from .scene_sim import read_spec, render_scene, warn_if_unlit

    if args.count < 0:
        raise ValidationError("--count must be >= 0")
    if args.spec:
        spec = read_spec(args.spec)
        s = render_scene(spec)
        warn_if_unlit(s)
        samples = [s]
    else:
        samples = simulate(args.preset, args.count, args.seed, args.size, args.noise_sigma)
    roles = split_dataset([s.spec_id for s in samples], args.proportions, args.seed)
    write_dataset(samples, args.out_dir, roles)
    write_run_config(args.out_dir, args)
    log.info("wrote %d samples to %s", len(samples), args.out_dir)
    return EXIT_OK


def cmd_synth(args):
    from .data_synth import clamped_fraction
    from .pipeline import make_dataset, synthesize

    if args.count < 0:
        raise ValidationError("--count must be >= 0")
    samples, sources = synthesize(args.count, args.seed, args.size, alpha_range=args.alpha_range,
                                  sigma_range=args.blur_sigma_range, sharp_fraction=args.sharp_fraction)
    make_dataset(samples, args.out, args.seed, args.proportions, sources)
    frac = float(np.mean([clamped_fraction(s.t_a, s.r_a) for s in samples])) if samples else 0.0
    write_run_config(args.out, args, {"clamped_fraction": frac})
    log.info("wrote %d synthetic pairs to %s (clamped pixels %.3f%%)", len(samples), args.out, 100 * frac)
    return EXIT_OK


def cmd_train(args):
    from .data_synth import Manifest
    from .nn import TrainConfig, save_checkpoint, train
    from .pipeline import load_prepared

    manifest = Manifest.read(args.manifest)
    tr, va = load_prepared(manifest, "train"), load_prepared(manifest, "val")
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                         seed=args.seed, channels=args.channels, detach_reflection=args.detach,
                         lr_schedule=args.lr_schedule)
    progress = lambda e, row: log.info("epoch %d train %.6g val %.6g", e, row[1], row[2])
    res = train(tr, va, args.variant, config, progress)
    os.makedirs(args.out_dir, exist_ok=True)
    save_checkpoint(os.path.join(args.out_dir, "model.ckpt"), res.checkpoint)
    with open(os.path.join(args.out_dir, "loss.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write(res.loss_csv())
    write_run_config(args.out_dir, args)
    log.info("best epoch %d", res.checkpoint.epoch)
    return EXIT_OK


def cmd_infer(args):
    from . import io
    from .nn import develop_inputs, infer, load_checkpoint
    from .nn.model import guide_key

    ck = load_checkpoint(args.checkpoint)
    raw_a = io.read_fraw(args.ambient)
    key = guide_key(ck.variant)
    if key is not None and not args.flash:
        raise ValidationError(f"variant {ck.variant} needs --flash")
    raw_f = io.read_fraw(args.flash) if args.flash else raw_a
    x = develop_inputs(raw_a, raw_f)
    t_hat, r_hat = infer(ck, x["ia"], x[key] if key else None)
    out = args.out_dir
    write_run_config(out, args)
    for name, img in (("t_hat", t_hat), ("r_hat", r_hat)):
        if img is None:
            continue
        hwc = img.transpose(1, 2, 0)
        io.write_pfm(os.path.join(out, f"{name}.pfm"), hwc)
        io.write_ppm(os.path.join(out, f"{name}.ppm"), hwc)
    return EXIT_OK


def cmd_eval(args):
    from .data_synth import Manifest
    from .metrics import evaluate, summary_table
    from .nn import load_checkpoint
    from .pipeline import load_prepared, write_reports

    cks = {}
    for path in args.checkpoints:
        ck = load_checkpoint(path)
        if ck.variant in cks:
            raise ValidationError(f"two checkpoints for variant {ck.variant}")
        cks[ck.variant] = ck
    samples = load_prepared(Manifest.read(args.manifest), args.role)
    if not samples:
        raise ValidationError(f"no {args.role} samples in {args.manifest}")
    reports = evaluate(samples, cks)
    write_reports(reports, args.out_dir)
    write_run_config(args.out_dir, args)
    sys.stdout.write(summary_table(reports))
    return EXIT_OK


def cmd_gradcheck(args):
    from .nn.gradcheck import run_all

    results = run_all(args.seed, args.h)
    text = "".join(r.line() + "\n" for r in results)
    sys.stdout.write(text)
    if args.out_dir:
        write_run_config(args.out_dir, args)
        with open(os.path.join(args.out_dir, "gradcheck.txt"), "w", encoding="utf-8") as f:
            f.write(text)
    failed = [r.name for r in results if not r.passed]
    if failed:
        log.error("gradient check failed for: %s", ", ".join(failed))
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_ablate(args):
    from .metrics import summary_table
    from .nn import TrainConfig
    from .nn.model import VARIANTS
    from .pipeline import TOY_LEARNING_RATE, AblationConfig, run_ablation

    bad = [v for v in args.variants if v not in VARIANTS]
    if bad:
        raise ValidationError(f"unknown variants: {', '.join(bad)}")
    base = AblationConfig.tiny(args.seed) if args.tiny else AblationConfig(seed=args.seed)
    train_cfg = TrainConfig(
        epochs=args.epochs if args.epochs is not None else base.train.epochs,
        learning_rate=args.lr if args.lr is not None else TOY_LEARNING_RATE,
        lr_schedule=args.lr_schedule or base.train.lr_schedule,
        seed=args.seed if args.train_seed is None else args.train_seed, channels=args.channels)
    cfg = AblationConfig(preset=args.preset, source=args.source,
                         count=args.count if args.count is not None else base.count,
                         size=args.size, seed=args.seed, proportions=args.proportions,
                         variants=tuple(args.variants), train=train_cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "run_config.txt"), "w", encoding="utf-8", newline="\n") as f:
        f.write("".join(line + "\n" for line in cfg.lines()))
    reports = run_ablation(cfg, args.out_dir)
    sys.stdout.write(summary_table(reports))
    return EXIT_OK


COMMANDS = {"flashonly": cmd_flashonly, "simulate": cmd_simulate, "synth": cmd_synth,
            "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "ablate": cmd_ablate}


def main(argv=None) -> int:
    from .nn import TrainingError

    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(args.log_level)
    try:
        return COMMANDS[args.verb](args)
    except (TrainingError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
