"""Command-line front end: ``python -m dualsam <command> ...``.

Exit codes: 0 success, 1 runtime failure (one-line message on stderr),
2 usage error.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import codec, imaging
from .imaging import RawImage

COMMANDS = ("gamma", "encode", "decode", "synth", "train", "eval", "ablate", "selftest")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.add_argument("--epochs", type=int, default=30, help="training epochs (default 30)")
    p.add_argument("--xi", type=float, default=0.5, help="binarization threshold (default 0.5)")
    p.add_argument("--gamma-variant", choices=imaging.GAMMA_VARIANTS, default="as-written")
    p.add_argument("--levels", type=int, default=4, help="decoder levels (default 4)")
    p.add_argument("--out", help="output path")
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="dualsam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = [_common()]

    p = sub.add_parser("gamma", parents=common, help="gamma-correct a PPM/PGM image")
    p.add_argument("--in", dest="input", required=True)

    p = sub.add_parser("encode", parents=common, help="mask PGM -> connectivity label file")
    p.add_argument("--mask", required=True)

    p = sub.add_parser("decode", parents=common, help="connectivity label or map file -> mask PGM")
    p.add_argument("--label", required=True)

    p = sub.add_parser("synth", parents=common, help="write synthetic image/mask pairs")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--start", type=int, default=0)

    p = sub.add_parser("train", parents=common, help="train on synthetic data into a run directory")
    p.add_argument("--train-count", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--head", choices=("c3p", "pixel"), default="c3p")
    p.add_argument("--single", action="store_true", help="alpha branch only")
    p.add_argument("--no-pms", action="store_true", help="disable mutual supervision")

    p = sub.add_parser("eval", parents=common, help="evaluate a run on held-out synthetic data")
    p.add_argument("--run", required=True, help="run directory written by train")
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--class-mode", choices=("fg-only", "two-class"), default="fg-only")

    p = sub.add_parser("ablate", parents=common, help="head/branch/mutual-supervision comparison")
    p.add_argument("--seeds", type=int, default=3, help="number of seeds, starting at --seed")
    p.add_argument("--train-count", type=int, default=200)
    p.add_argument("--test-count", type=int, default=50)

    sub.add_parser("selftest", parents=common, help="run the built-in oracle checks")
    return parser


def parse_args(argv=None):
    args = build_parser().parse_args(argv)
    if args.command in ("gamma", "encode", "decode", "synth", "train") and not args.out:
        _usage_error(args.command, "the following arguments are required: --out")
    if not 0.0 < args.xi < 1.0:
        _usage_error(args.command, "--xi must lie in (0, 1)")
    if args.epochs < 0:
        _usage_error(args.command, "--epochs must be >= 0")
    return args


def _usage_error(command, message):
    parser = build_parser()
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    subparsers.choices[command].error(message)


def model_config(args, **kw):
    from .model import ModelConfig
    base = ModelConfig()
    levels = args.levels
    if not 1 <= levels <= base.encoder_layers:
        raise ValueError(f"--levels must lie in 1..{base.encoder_layers}")
    inj = tuple(range(base.encoder_layers - levels + 1, base.encoder_layers + 1))
    return replace(base, decoder_levels=levels, injection_indices=inj, prompt_layers=levels,
                   gamma_variant=args.gamma_variant, seed=args.seed, **kw)


def write_mask(path, mask):
    imaging.write_pnm(path, RawImage.from_array((np.asarray(mask) > 0).astype(np.uint8) * 255))


def read_mask(path):
    img = imaging.read_pnm(path)
    if img.channels != 1:
        raise ValueError(f"{path}: mask must be a single-channel PGM")
    return (img.pixels[:, :, 0] > 0).astype(np.uint8)


# ------------------------------------------------------------- commands

def cmd_gamma(args):
    img = imaging.read_pnm(args.input)
    _, stats = imaging.to_gray(img)
    g = imaging.gamma_coefficient(stats.mean_gray, args.gamma_variant)
    out = imaging.gamma_correct(img.normalized(), stats, args.gamma_variant)
    imaging.write_pnm(args.out, imaging.quantize(out))
    print(f"gamma={g!r}")


def cmd_encode(args):
    with open(args.out, "wb") as fh:
        fh.write(codec.save_label(codec.encode(read_mask(args.mask))))


def cmd_decode(args):
    with open(args.label, "rb") as fh:
        data = fh.read()
    if data.startswith(codec.MAP_MAGIC):
        label = codec.threshold(codec.load_map(data), args.xi)
    else:
        label = codec.load_label(data)
    write_mask(args.out, codec.decode(label))


def cmd_synth(args):
    from .synthetic import gen_synthetic
    os.makedirs(args.out, exist_ok=True)
    for s in gen_synthetic(args.seed, args.count, start=args.start):
        imaging.write_pnm(os.path.join(args.out, f"img_{s.index:04d}.ppm"), s.image)
        write_mask(os.path.join(args.out, f"mask_{s.index:04d}.pgm"), s.mask)


def cmd_train(args):
    from .synthetic import gen_synthetic
    from .training import TrainConfig, run_training
    cfg = model_config(args, head=args.head, dual=not args.single)
    tc = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, xi=args.xi,
                     pms=not args.no_pms and not args.single, seed=args.seed)
    samples = gen_synthetic(args.seed, args.train_count)

    def log(row):
        print(f"epoch {row['epoch']:3d}  total {row['total']:.4f}  mu {row['mu']:.6f}", flush=True)

    run_training(args.out, cfg, tc, samples,
                 extra={"data.seed": args.seed, "data.train_count": args.train_count}, log=log)


def cmd_eval(args):
    from .synthetic import gen_synthetic
    from .training import evaluate_model, load_model, read_config
    cfg, _, extra = read_config(os.path.join(args.run, "config.txt"))
    with open(os.path.join(args.run, "final.ckpt"), "rb") as fh:
        model = load_model(fh.read(), cfg)
    seed = int(extra.get("data.seed", args.seed))
    start = int(extra.get("data.train_count", 0))
    report = evaluate_model(model, gen_synthetic(seed, args.count, start=start),
                            class_mode=args.class_mode, xi=args.xi)
    out = args.out or os.path.join(args.run, "metrics.csv")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    with open(os.path.splitext(out)[0] + "_summary.txt", "w", encoding="utf-8") as fh:
        fh.write(report.summary())
    print(report.summary(), end="")


def cmd_ablate(args):
    from .experiments import AblationBudget, format_table, run_ablation
    from .training import TrainConfig
    budget = AblationBudget(args.train_count, args.test_count, args.epochs)
    seeds = tuple(range(args.seed, args.seed + args.seeds))

    def log(r):
        print(f"{r['variant']:<16} seed {r['seed']}  miou {r['miou']:.4f}", flush=True)

    rows = run_ablation(seeds=seeds, budget=budget, log=log, base=model_config(args),
                        train_cfg=TrainConfig(xi=args.xi))
    table = format_table(rows)
    print(table)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table + "\n")


def cmd_selftest(args):
    from .selftest import run_all
    failures = run_all(print)
    if failures:
        raise RuntimeError(f"{failures} self-test check(s) failed")


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def run(args) -> int:
    try:
        HANDLERS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - the CLI reports every failure as one line
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"dualsam {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    return run(parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
