"""Command-line entry points.

Exit codes: 0 on success, 2 for config/input problems, 3 for numeric
failures (divergent training, failed gradient checks). The DDT_SEED
environment variable overrides the configured seed.
"""

from __future__ import annotations

import argparse
import os
import re
import sys

from .checkpoint import CheckpointError, load_checkpoint, model_from_checkpoint
from .configio import Config, ConfigError, load_config
from .costs import cost_network
from .data import HOLDOUT_OFFSET, make_clean_images
from .gradcheck import module_names, run_suite
from .network import build
from .ppm import read_image, write_image
from .training import NumericError, denoise_image, evaluate, train

__all__ = ["main"]


def _env_seed() -> int | None:
    raw = os.environ.get("DDT_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"DDT_SEED must be an integer, got {raw!r}") from None


def _load_dataset(cfg: Config, seed: int) -> list:
    if cfg.data.image_dir:
        names = sorted(
            n
            for n in os.listdir(cfg.data.image_dir)
            if os.path.splitext(n)[1].lower() in (".ppm", ".pgm", ".png")
        )
        if not names:
            raise ConfigError(f"no .ppm/.pgm/.png images in {cfg.data.image_dir!r}")
        return [read_image(os.path.join(cfg.data.image_dir, n)) for n in names]
    return make_clean_images(seed, cfg.data.train_images, cfg.data.image_size)


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = _env_seed()
    if seed is not None:
        from dataclasses import replace

        cfg = Config(cfg.network, replace(cfg.train, seed=seed), cfg.data)
    dataset = _load_dataset(cfg, cfg.train.seed)
    model = build(cfg.network, seed=cfg.train.seed)
    print(f"training for {cfg.train.iterations} iterations, {model.num_params()} parameters")
    train(model, cfg.network, cfg.train, dataset, out_dir=args.out, log=print)
    print(f"done; checkpoint and metrics.csv in {args.out}")
    return 0


def _cmd_denoise(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = model_from_checkpoint(ckpt)
    noisy = read_image(args.infile)
    write_image(args.outfile, denoise_image(model, noisy))
    return 0


def _parse_sigmas(raw: str) -> list[float]:
    try:
        sigmas = [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"--sigma expects comma-separated numbers, got {raw!r}") from None
    if not sigmas or any(s < 0 for s in sigmas):
        raise ConfigError(f"--sigma needs non-negative values, got {raw!r}")
    return sigmas


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = model_from_checkpoint(ckpt)
    seed = _env_seed()
    if seed is None:
        seed = ckpt.seed
    if args.testdir:
        names = sorted(
            n
            for n in os.listdir(args.testdir)
            if os.path.splitext(n)[1].lower() in (".ppm", ".pgm", ".png")
        )
        if not names:
            raise ConfigError(f"no .ppm/.pgm/.png images in {args.testdir!r}")
        testset = [read_image(os.path.join(args.testdir, n)) for n in names]
    else:
        # no test directory: fall back to synthetic held-out images drawn
        # from a stream disjoint from the synthetic training set
        testset = make_clean_images(seed, 4, 96, offset=HOLDOUT_OFFSET)
    report = evaluate(model, testset, sigmas=_parse_sigmas(args.sigma), seed=seed)
    for sigma, row in report.items():
        print(
            f"sigma={sigma:g} psnr={row['psnr']:.2f} ssim={row['ssim']:.4f} "
            f"(noisy psnr={row['noisy_psnr']:.2f})"
        )
    return 0


def _cmd_flops(args) -> int:
    cfg = load_config(args.config) if args.config else None
    net = cfg.network if cfg else None
    if net is None:
        from .network import NetworkConfig

        net = NetworkConfig()
    m = re.fullmatch(r"(\d+)[xX](\d+)", args.resolution)
    if not m:
        raise ConfigError(f"--resolution expects HxW, got {args.resolution!r}")
    h, w = int(m.group(1)), int(m.group(2))
    d = net.divisor
    if h % d or w % d:
        raise ConfigError(f"resolution {h}x{w} must be divisible by {d} for this config")
    report = cost_network(net, h, w)
    print(report.as_csv() if args.csv else report.as_table())
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_suite(args.module)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 3 if failed else 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddt", description="dual-branch deformable denoiser")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a TOML config")
    p.add_argument("--config", required=True, help="TOML config file")
    p.add_argument("--out", required=True, help="output directory for metrics.csv/checkpoints")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("denoise", help="denoise one image with a checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--in", dest="infile", required=True, help="noisy input image")
    p.add_argument("--out", dest="outfile", required=True, help="output image path")
    p.set_defaults(func=_cmd_denoise)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out images")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--sigma", default="15,25,50", help="comma-separated noise levels (0-255 scale)")
    p.add_argument("--testdir", default="", help="directory of clean test images (default: synthetic)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("flops", help="analytic cost table for a config")
    p.add_argument("--config", default="", help="TOML config file (default: stock model)")
    p.add_argument("--resolution", default="256x256", help="input extent HxW")
    p.add_argument("--csv", action="store_true", help="emit CSV instead of a table")
    p.set_defaults(func=_cmd_flops)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--module", default=None, choices=module_names(), help="restrict to one module")
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except (ConfigError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
