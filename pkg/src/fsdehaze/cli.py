"""Command-line entry point.

Subcommands: synthesize (paired dataset generation), train, dehaze,
evaluate (PSNR/SSIM report), det-eval (detection AP/mAP from TSV files).

Exit codes: 0 success, 2 configuration or input error, 3 numerical
failure during training, 1 any other runtime failure. Every run writes a
run_manifest.json into its output directory recording the arguments, the
seed, timestamps, and content fingerprints of the produced artifacts;
reruns with identical inputs produce identical fingerprints. A lock file
guards each output directory against concurrent runs.

The FSDEHAZE_DEVICE environment variable selects the default compute
device (e.g. cpu, cuda, cuda:0) for train/dehaze.
"""

import argparse
import hashlib
import json
import math
import os
import sys
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

from . import imgio, infer, metrics
from .checkpoint import parameter_digest, read_checkpoint, state_dict_digest
from .data import (
    DEFAULT_BETA_RANGE,
    DEFAULT_LIGHT_RANGE,
    DEFAULT_T_RANGE,
    SynthesisRecipe,
    generate_pairs,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    FsdehazeError,
    TrainingDivergedError,
)
from .train import PRESETS, TrainConfig, train

LOCK_NAME = ".run.lock"
MANIFEST_JSON = "run_manifest.json"


# ---------------------------------------------------------------------------
# run bookkeeping
# ---------------------------------------------------------------------------

@contextmanager
def output_lock(out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(
            f"another run owns {out_dir} (remove stale {LOCK_NAME} if no run is active)"
        ) from None
    os.close(fd)
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def digest_tree(root, patterns=("**/*",)):
    """Combined digest over file contents, keyed by relative path."""
    root = Path(root)
    files = sorted(
        p for pattern in patterns for p in root.glob(pattern)
        if p.is_file() and p.name not in (LOCK_NAME, MANIFEST_JSON)
    )
    h = hashlib.sha256()
    for p in files:
        h.update(str(p.relative_to(root)).encode())
        h.update(_sha256_file(p).encode())
    return h.hexdigest()


def write_run_manifest(out_dir, subcommand, config, seed, started_at, fingerprints):
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "started_at": started_at,
        "finished_at": _now(),
        "fingerprints": fingerprints,
    }
    path = Path(out_dir) / MANIFEST_JSON
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _now():
    return datetime.now(timezone.utc).isoformat()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synthesize(args):
    recipe = SynthesisRecipe(
        mode=args.mode,
        beta_range=tuple(args.beta_range),
        t_range=tuple(args.t_range),
        light_range=tuple(args.light_range),
        seed=args.seed,
    )
    started = _now()
    with output_lock(args.out):
        manifest = generate_pairs(args.clean_dir, args.depth_dir, recipe,
                                  args.out, args.count)
        fingerprints = {"dataset": digest_tree(args.out)}
        write_run_manifest(args.out, "synthesize", _arg_dict(args), args.seed,
                           started, fingerprints)
    print(manifest)
    return 0


def _train_config(args):
    if args.config:
        config = TrainConfig.from_file(args.config)
    else:
        config = TrainConfig()
    overrides = {
        "preset": args.preset,
        "max_iterations": args.max_iterations,
        "seed": args.seed,
        "batch_size": args.batch_size,
        "patch": args.patch,
        "checkpoint_interval": args.checkpoint_interval,
        "device": args.device,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    config.__post_init__()
    return config


def cmd_train(args):
    config = _train_config(args)
    started = _now()
    with output_lock(args.out):
        try:
            final = train(config, args.data, args.out, resume=args.resume)
        except TrainingDivergedError as exc:
            diag = Path(args.out) / "divergence.json"
            diag.write_text(json.dumps({
                "iteration": exc.iteration,
                "batch": exc.batch_names,
                "losses": exc.losses,
            }, indent=2) + "\n", encoding="utf-8")
            print(f"error: {exc}\ndiagnostics: {diag}", file=sys.stderr)
            return 3
        record = read_checkpoint(final)
        fingerprints = {
            "parameters": state_dict_digest(record["generator"], record["discriminator"]),
        }
        write_run_manifest(args.out, "train", _arg_dict(args, config=vars(config).copy()),
                           config.seed, started, fingerprints)
    print(final)
    return 0


def cmd_dehaze(args):
    inputs = imgio.list_images(args.input) if Path(args.input).is_dir() else []
    if not inputs:
        raise ConfigError(f"no input images under {args.input}")
    net = infer.generator_from_checkpoint(args.checkpoint, device=args.device)
    started = _now()
    with output_lock(args.out):
        out = Path(args.out)
        for path in inputs:
            img = imgio.load_image(path)
            if args.tile:
                result = infer.dehaze_tiled(net, img, args.tile, args.overlap)
            else:
                result = infer.dehaze_array(net, img)
            imgio.save_image(out / (path.stem + ".png"), result)
        fingerprints = {
            "outputs": digest_tree(out, patterns=("*.png",)),
            "checkpoint": parameter_digest(net),
        }
        write_run_manifest(out, "dehaze", _arg_dict(args), None, started, fingerprints)
    return 0


def _matched_names(dir_a, dir_b, label_a, label_b):
    names_a = {p.name for p in imgio.list_images(dir_a)}
    names_b = {p.name for p in imgio.list_images(dir_b)}
    if names_a != names_b:
        raise DataError(
            f"{label_a}/{label_b} filename sets differ: "
            f"only in {label_a} {sorted(names_a - names_b)}, "
            f"only in {label_b} {sorted(names_b - names_a)}"
        )
    if not names_a:
        raise ConfigError(f"no images under {dir_a}")
    return sorted(names_a)


def cmd_evaluate(args):
    names = _matched_names(args.results, args.truth, "results", "truth")
    cfg = metrics.SsimConfig(mode=args.ssim_mode, window=args.ssim_window)
    started = _now()
    with output_lock(args.out):
        out = Path(args.out)
        psnr_values, ssim_values = [], []
        with open(out / "per_image.tsv", "w", encoding="utf-8") as fh:
            fh.write("name\tpsnr\tssim\n")
            for name in names:
                result = imgio.load_image(Path(args.results) / name)
                truth = imgio.load_image(Path(args.truth) / name)
                p = metrics.psnr(truth, result, peak=1.0)
                s = metrics.ssim(truth, result, cfg)
                psnr_values.append(p)
                ssim_values.append(s)
                fh.write(f"{name}\t{'inf' if math.isinf(p) else f'{p:.6f}'}\t{s:.6f}\n")
        row = metrics.write_metric_report(out / "report.tsv", psnr_values, ssim_values)
        fingerprints = {"report": digest_tree(out, patterns=("*.tsv",))}
        write_run_manifest(out, "evaluate", _arg_dict(args), None, started, fingerprints)
    print("PSNR_AVG\tSSIM_AVG\tPSNR_SD\tSSIM_SD")
    print("\t".join("inf" if math.isinf(v) else f"{v:.6f}" for v in row))
    return 0


def cmd_det_eval(args):
    predictions = metrics.read_detection_file(args.predictions)
    truths = metrics.read_detection_file(args.truths)
    categories = sorted({t.category for t in truths} | {p.category for p in predictions})
    if not categories:
        raise ConfigError("no detection records found")
    map_value, table = metrics.mean_average_precision(
        predictions, truths, categories, iou_threshold=args.iou)
    started = _now()
    with output_lock(args.out):
        out = Path(args.out)
        with open(out / "ap_table.tsv", "w", encoding="utf-8") as fh:
            fh.write("category\tAP\n")
            for cat in sorted(table):
                fh.write(f"{cat}\t{table[cat]:.6f}\n")
            fh.write(f"mAP\t{map_value:.6f}\n")
        fingerprints = {"table": digest_tree(out, patterns=("*.tsv",))}
        write_run_manifest(out, "det-eval", _arg_dict(args), None, started, fingerprints)
    for cat in sorted(table):
        print(f"{cat}\t{table[cat]:.6f}")
    print(f"mAP\t{map_value:.6f}")
    return 0


def _arg_dict(args, **extra):
    skip = {"func"}
    out = {k: v for k, v in vars(args).items() if k not in skip}
    out.update(extra)
    return out


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="fsdehaze",
        description="Haze synthesis, GAN dehazing, and evaluation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    default_device = os.environ.get("FSDEHAZE_DEVICE", "cpu")

    p = sub.add_parser("synthesize", help="generate paired hazy/clean data")
    p.add_argument("--clean-dir", required=True)
    p.add_argument("--depth-dir", default=None)
    p.add_argument("--mode", choices=("constant-t", "depth-based"), default="constant-t")
    p.add_argument("--beta-range", nargs=2, type=float, default=list(DEFAULT_BETA_RANGE),
                   metavar=("LO", "HI"))
    p.add_argument("--t-range", nargs=2, type=float, default=list(DEFAULT_T_RANGE),
                   metavar=("LO", "HI"))
    p.add_argument("--light-range", nargs=2, type=float, default=list(DEFAULT_LIGHT_RANGE),
                   metavar=("LO", "HI"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("train", help="train the dehazing GAN")
    p.add_argument("--data", required=True, help="dataset root with hazy/ and clean/")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--checkpoint-interval", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--device", default=default_device)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("dehaze", help="run a trained generator on images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tile", type=int, default=None,
                   help="process in overlapping tiles of this size")
    p.add_argument("--overlap", type=int, default=infer.DEFAULT_OVERLAP)
    p.add_argument("--device", default=default_device)
    p.set_defaults(func=cmd_dehaze)

    p = sub.add_parser("evaluate", help="PSNR/SSIM report for paired directories")
    p.add_argument("--results", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ssim-mode", choices=("global", "windowed"), default="global")
    p.add_argument("--ssim-window", type=int, default=11)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("det-eval", help="AP/mAP from detection TSV files")
    p.add_argument("--predictions", required=True)
    p.add_argument("--truths", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_det_eval)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, DataError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FsdehazeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
