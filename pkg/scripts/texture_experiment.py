"""Train the small texture model on a freshly generated 5-class synthetic set.

Writes the dataset, checkpoint, history and test-split reports under ``--out`` and
prints the per-epoch validation curve.

    python3 scripts/texture_experiment.py --out /tmp/textures --epochs 150
"""

import argparse
import time
from pathlib import Path

from nasvit.checkpoint import save_checkpoint
from nasvit.dataset import CLASS_NAMES, scan_directory, stratified_split
from nasvit.metrics import confusion, emit_confusion_svg, emit_csv
from nasvit.presets import texture_run
from nasvit.synthetic import write_texture_dataset
from nasvit.training import evaluate, render_history, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--epochs", type=int, default=150)
    ap.add_argument("--per-class", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = write_texture_dataset(args.out / "data", CLASS_NAMES, args.per_class, size=32, seed=args.seed)
    run = texture_run(args.epochs, args.seed)
    manifest = stratified_split(scan_directory(data), run.data.fractions, run.data.split_seed)

    start = time.perf_counter()
    best, history = train(
        run, manifest, on_epoch=lambda r: print(f"epoch {r.epoch:3d}  val_f1 {r.val_macro_f1:.3f}  loss {r.train_loss:.4f}")
    )
    elapsed = time.perf_counter() - start

    save_checkpoint(best, args.out / "best.nvit")
    (args.out / "history.csv").write_text(render_history(history))
    for split in ("train", "test"):
        res = evaluate(best.tensors(), run, manifest, split)
        report = res.report(manifest.class_names)
        print(f"{split}: accuracy {report.accuracy:.3f}  macro-F1 {report.macro['f1']:.3f}")
        if split == "test":
            cm = confusion(zip(res.truths, res.predictions), len(CLASS_NAMES))
            emit_csv(report, cm, args.out / "test_metrics.csv")
            emit_confusion_svg(cm, args.out / "test_confusion.svg")
    print(f"best epoch {best.epoch}, {elapsed:.1f} s for {len(history)} epochs")


if __name__ == "__main__":
    main()
