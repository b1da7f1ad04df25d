"""Command line interface.

    proxdenoise dataset make --src DIR --out DIR [--crop N] [--seed N] [--val-fraction F]
    proxdenoise train --config FILE --variant {local,nonlocal} --channels {gray,color} --out CKPT
    proxdenoise denoise --model CKPT --sigma S --in IMG --out IMG
    proxdenoise eval --model CKPT --manifest FILE --sigmas 5,10,25 [--seed N]
    proxdenoise gradcheck [--module NAME] [--seed N]

Usage errors exit with status 2 (argparse's convention); runtime failures
print one line to stderr and exit with status 1.

The train config is JSON.  Recognized keys: "manifest" (path, relative to
the config file), "epochs", "lr", "batch_size", "noise_grid", "seed",
"beta1", "beta2", "adam_eps", "lr_decay", and "arch", an object that may
override "stages", "filters", "kernel", "group_size", "window".  Anything
omitted falls back to the full-scale defaults for the chosen variant and
channel count.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import load_manifest, make_dataset, manifest_images
from .errors import EngineError
from .netpbm import read_image, write_image
from .network import (
    Architecture,
    color_architecture,
    forward_with_residuals,
    grayscale_architecture,
    network_forward,
)
from .training import TrainConfig, awgn, psnr, train_full
from .verify import MODULES, run_checks

__all__ = ["main", "entry"]


def _positive_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not value > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def _sigma_list(text):
    try:
        values = tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad noise level list: {text!r}")
    if not values or min(values) <= 0:
        raise argparse.ArgumentTypeError("need a comma-separated list of positive noise levels")
    return values


def _build_parser():
    parser = argparse.ArgumentParser(prog="proxdenoise",
                                     description="trainable constrained-gradient image denoiser")
    sub = parser.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="dataset preparation")
    ds_sub = ds.add_subparsers(dest="dataset_command", required=True)
    mk = ds_sub.add_parser("make", help="crop sources and write a manifest")
    mk.add_argument("--src", required=True)
    mk.add_argument("--out", required=True)
    mk.add_argument("--crop", type=int, default=180)
    mk.add_argument("--seed", type=int, default=0)
    mk.add_argument("--val-fraction", type=float, default=0.2)

    tr = sub.add_parser("train", help="train a model")
    tr.add_argument("--config", required=True)
    tr.add_argument("--variant", choices=("local", "nonlocal"), required=True)
    tr.add_argument("--channels", choices=("gray", "color"), required=True)
    tr.add_argument("--out", required=True)

    dn = sub.add_parser("denoise", help="denoise one image")
    dn.add_argument("--model", required=True)
    dn.add_argument("--sigma", type=_positive_float, required=True)
    dn.add_argument("--in", dest="input", required=True)
    dn.add_argument("--out", dest="output", required=True)

    ev = sub.add_parser("eval", help="average PSNR on the validation split")
    ev.add_argument("--model", required=True)
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--sigmas", type=_sigma_list, required=True,
                    help="comma-separated noise levels")
    ev.add_argument("--seed", type=int, default=0)

    gc = sub.add_parser("gradcheck", help="run the verification suite")
    gc.add_argument("--module", choices=MODULES)
    gc.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_dataset_make(args):
    path = make_dataset(args.src, args.out, crop=args.crop, seed=args.seed,
                        val_fraction=args.val_fraction)
    print(path)
    return 0


def _architecture(variant, channels, overrides):
    base = grayscale_architecture(variant) if channels == 1 else color_architecture(variant)
    fields = {}
    for key in ("stages", "filters", "group_size"):
        if key in overrides:
            fields[key] = int(overrides[key])
    for key in ("kernel", "window"):
        if key in overrides:
            fields[key] = tuple(int(v) for v in overrides[key])
    if not fields:
        return base
    return Architecture(
        variant,
        channels,
        fields.get("stages", base.stages),
        fields.get("filters", base.filters),
        fields.get("kernel", base.kernel),
        rbf_size=base.rbf_size,
        rbf_limit=base.rbf_limit,
        rbf_precision=base.rbf_precision,
        group_size=fields.get("group_size", base.group_size),
        window=fields.get("window", base.window),
    )


def _cmd_train(args):
    config_path = Path(args.config)
    with open(config_path) as f:
        doc = json.load(f)
    if "manifest" not in doc:
        raise EngineError("train config must name a dataset manifest")
    channels = 1 if args.channels == "gray" else 3
    arch = _architecture(args.variant, channels, doc.get("arch", {}))
    cfg_keys = ("epochs", "lr", "batch_size", "seed", "beta1", "beta2", "adam_eps", "lr_decay")
    kwargs = {k: doc[k] for k in cfg_keys if k in doc}
    if "noise_grid" in doc:
        kwargs["noise_grid"] = tuple(float(s) for s in doc["noise_grid"])
    config = TrainConfig(**kwargs)
    manifest = load_manifest((config_path.parent / doc["manifest"]))
    images = manifest_images(manifest, "train")
    params, log = train_full(images, arch, config)
    save_checkpoint(args.out, params)
    log_path = Path(args.out).with_suffix(Path(args.out).suffix + ".losses.csv")
    with open(log_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "joint_loss"])
        for i, loss in enumerate(log):
            writer.writerow([i, f"{loss:.6f}"])
    print(args.out)
    return 0


def _cmd_denoise(args):
    params = load_checkpoint(args.model)
    img = read_image(args.input)
    out = network_forward(img, args.sigma, params)
    write_image(args.output, out)
    return 0


def _cmd_eval(args):
    sigmas = args.sigmas
    params = load_checkpoint(args.model)
    manifest = load_manifest(args.manifest)
    images = manifest_images(manifest, "val")
    if not images:
        raise EngineError("manifest has an empty validation split")
    writer = csv.writer(sys.stdout)
    writer.writerow(["sigma", "avg_input_psnr", "avg_psnr"])
    for si, sigma in enumerate(sigmas):
        noisy_db = []
        out_db = []
        for qi, x in enumerate(images):
            y = awgn(x, sigma, np.random.default_rng([args.seed, si, qi]))
            out, trace = forward_with_residuals(y, sigma, params)
            # every stage must stay inside its noise ball, up to the
            # rounding of the forward pass's working precision
            slack = 16.0 * float(np.finfo(out.dtype).eps)
            for t, (dist, radius) in enumerate(trace):
                if dist > radius * (1.0 + slack):
                    raise EngineError(
                        f"stage {t} left its noise ball: {dist:.6e} > {radius:.6e}"
                    )
            noisy_db.append(psnr(y, x))
            out_db.append(psnr(out, x))
        writer.writerow([f"{sigma:g}", f"{np.mean(noisy_db):.4f}", f"{np.mean(out_db):.4f}"])
    return 0


def _cmd_gradcheck(args):
    results = run_checks(module=args.module, seed=args.seed)
    failed = 0
    for r in results:
        print(r.line())
        failed += 0 if r.ok else 1
    if failed:
        print(f"{failed} of {len(results)} checks failed", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "dataset": _cmd_dataset_make,
        "train": _cmd_train,
        "denoise": _cmd_denoise,
        "eval": _cmd_eval,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except (EngineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())
