"""Command-line interface: preprocess, train, eval, predict, bench.

Exit codes: 0 ok, 2 config error, 3 I/O error, 4 non-finite loss.
"""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import config_hash, describe_keys, load_config
from .dataset import (
    SPLITS,
    normalize,
    prepare_image,
    resize_bilinear,
    scan_directory,
    stratified_split,
    to_rgb,
    write_manifest_csv,
)
from .errors import ConfigError, FormatError, InputError, NonFiniteLossError, StageError
from .fusion import model_forward, to_class_probs
from .imageio import is_image, read_image, write_png
from .metrics import confusion, emit_comparison_table, emit_confusion_svg, emit_csv
from .mixprocessing import STAGES, ImageBuffer, mixprocess
from .synthetic import chest_phantom
from .training import evaluate, init_params, render_history, train

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _resolve(flag, fallback: str, what: str) -> Path:
    value = flag or fallback
    if not value:
        raise ConfigError(f"no {what} given (flag or config key)")
    return Path(value)


# ---------------------------------------------------------------------------


def cmd_preprocess(args) -> int:
    run = load_config(args.config)
    src, dst = Path(args.in_dir), Path(args.out)
    if not src.is_dir():
        return _fail(EXIT_IO, f"input directory {src} does not exist")
    images = sorted(p for p in src.rglob("*") if p.is_file() and is_image(p))
    if not images:
        return _fail(EXIT_IO, f"no images found in {src}")
    dst.mkdir(parents=True, exist_ok=True)
    rows, failures = [], []
    for path in images:
        rel = path.relative_to(src)
        out_path = dst / rel.with_suffix(".png")
        timings: dict = {}
        try:
            img = ImageBuffer(read_image(path), source_path=str(path))
            result = mixprocess(img, run.preprocess, timings)
            write_png(out_path, result.pixels)
        except StageError as exc:
            if isinstance(exc.cause, ConfigError):
                raise exc.cause
            failures.append(f"{path}: {exc}")
            continue
        except InputError as exc:
            failures.append(f"{path}: {exc}")
            continue
        rows.append([rel.as_posix(), out_path.relative_to(dst).as_posix(), *(timings[s] for s in STAGES)])
    with open(dst / "index.csv", "w", newline="") as fh:
        fh.write("input_path,output_path," + ",".join(f"{s}_us" for s in STAGES) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    print(f"processed {len(rows)} of {len(images)} images -> {dst}")
    if failures:
        for f in failures:
            print(f"failed: {f}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def cmd_train(args) -> int:
    run = load_config(args.config)
    data = _resolve(args.data, run.data.root, "data directory")
    out = _resolve(args.out, run.data.output_dir, "output directory")
    manifest = stratified_split(scan_directory(data), run.data.fractions, run.data.split_seed)
    out.mkdir(parents=True, exist_ok=True)
    cache: dict = {}
    best, history = train(run, manifest, cache=cache)
    save_checkpoint(best, out / "best.nvit")
    (out / "history.csv").write_text(render_history(history), newline="")
    write_manifest_csv(manifest, out / "manifest.csv")

    train_eval = evaluate(best.tensors(), run, manifest, "train", cache)
    train_acc = train_eval.report(manifest.class_names).accuracy
    lines = [
        f"config_sha256 = {config_hash(run)}",
        f"train_seed = {run.train.seed}",
        f"split_seed = {run.data.split_seed}",
        f"augment_seed = {run.augment.seed}",
        f"best_epoch = {best.epoch}",
        f"best_val_macro_f1 = {best.val_metrics['macro_f1']:.6f}",
        f"best_train_accuracy = {train_acc:.6f}",
    ]
    for split in SPLITS:
        counts = manifest.class_counts(split)
        lines.append(f"split_counts.{split} = " + ",".join(str(c) for c in counts))
    (out / "run_manifest.txt").write_text("\n".join(lines) + "\n", newline="")
    print(f"best epoch {best.epoch}: val macro-F1 {best.val_metrics['macro_f1']:.3f}")
    print(f"train accuracy: {train_acc:.3f}")
    return EXIT_OK


def _class_dirs(root: Path) -> list[str]:
    if not root.is_dir():
        raise InputError(f"dataset root {root} is not a directory")
    return sorted(p.name for p in root.iterdir() if p.is_dir())


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    run = ck.run_config
    data = _resolve(args.data, run.data.root, "data directory")
    out = _resolve(args.out, run.data.output_dir, "output directory")
    present = _class_dirs(data)
    if sorted(ck.class_names) != present:
        return _fail(
            EXIT_CONFIG,
            f"checkpoint classes {list(ck.class_names)} do not match data directories {present}",
        )
    manifest = stratified_split(scan_directory(data, ck.class_names), run.data.fractions, run.data.split_seed)
    result = evaluate(ck.tensors(), run, manifest, args.split)
    cm = confusion(zip(result.truths, result.predictions), len(ck.class_names), ck.class_names)
    report = result.report(ck.class_names)
    out.mkdir(parents=True, exist_ok=True)
    emit_csv(report, cm, out / "metrics.csv")
    emit_confusion_svg(cm, out / "confusion.svg")
    emit_comparison_table(report, out / "comparison.csv")
    print(f"split: {args.split} ({report.samples} samples)")
    print(f"accuracy: {report.accuracy:.3f}")
    print(f"macro_f1: {report.macro['f1']:.3f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    run = ck.run_config
    img = prepare_image(args.image, run.preprocess, run.model.image_size)
    probs = model_forward(normalize(img), run.model, ck.tensors())
    (cp,) = to_class_probs(probs, ck.class_names)
    print(",".join([cp.class_name, *(f"{p:.6f}" for p in cp.probabilities)]))
    return EXIT_OK


def cmd_bench(args) -> int:
    run = load_config(args.config)
    n = args.iterations
    if n < 1:
        raise ConfigError(f"--iterations must be >= 1, got {n}")
    size = run.model.image_size
    phantom = ImageBuffer(chest_phantom(size, seed=0))

    stage_us = {s: [] for s in STAGES}
    for _ in range(n):
        t: dict = {}
        mixprocess(phantom, run.preprocess, t)
        for s in STAGES:
            stage_us[s].append(t[s])

    params = init_params(run.model, run.train.seed)
    x = normalize(to_rgb(phantom.with_pixels(resize_bilinear(phantom.pixels, (size, size)))))
    latencies = []
    for _ in range(n):
        start = time.perf_counter()
        model_forward(x, run.model, params)
        latencies.append((time.perf_counter() - start) * 1e3)

    ck = Checkpoint({k: v.data for k, v in params.items()}, run)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "bench.nvit"
        save_checkpoint(ck, path)
        nbytes = path.stat().st_size

    print(f"image_size: {size}")
    for s in STAGES:
        mean_us = float(np.mean(stage_us[s]))
        rate = 1e6 / mean_us if mean_us > 0 else float("inf")
        print(f"stage.{s}: mean_us={mean_us:.1f} images_per_s={rate:.2f}")
    print(f"latency_samples: {len(latencies)}")
    print(f"latency_ms_mean: {np.mean(latencies):.3f}")
    print(f"latency_ms_p95: {np.percentile(latencies, 95):.3f}")
    print(f"parameters: {sum(v.data.size for v in params.values())}")
    print(f"checkpoint_bytes: {nbytes}")
    print(f"checkpoint_mb: {nbytes / 1048576:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    keys = "config keys (key = default):\n" + "".join("  " + line + "\n" for line in describe_keys().splitlines())
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="nasvit", description=__doc__, formatter_class=fmt)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="apply MixProcessing to a directory", epilog=keys, formatter_class=fmt)
    p.add_argument("--in", dest="in_dir", required=True, help="input image directory")
    p.add_argument("--out", required=True, help="output directory (PNG + index.csv)")
    p.add_argument("--config", default=None, help="key = value config file")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train and keep the best checkpoint", epilog=keys, formatter_class=fmt)
    p.add_argument("--data", default=None, help="dataset root, one subdirectory per class")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split", epilog=keys, formatter_class=fmt)
    p.add_argument("--data", default=None, help="dataset root")
    p.add_argument("--checkpoint", required=True, help="checkpoint file (.nvit)")
    p.add_argument("--out", default=None, help="report directory")
    p.add_argument("--split", default="test", choices=SPLITS, help="split to evaluate (default: test)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one image", epilog=keys, formatter_class=fmt)
    p.add_argument("--image", required=True, help="PNG or JPG image")
    p.add_argument("--checkpoint", required=True, help="checkpoint file (.nvit)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="throughput, latency, size", epilog=keys, formatter_class=fmt)
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--iterations", type=int, default=10, help="timed repetitions (default: 10)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except StageError as exc:
        return _fail(EXIT_CONFIG if isinstance(exc.cause, ConfigError) else EXIT_IO, str(exc))
    except (InputError, FormatError, OSError) as exc:
        return _fail(EXIT_IO, str(exc))
    except NonFiniteLossError as exc:
        return _fail(EXIT_NUMERIC, str(exc))


if __name__ == "__main__":
    sys.exit(main())
