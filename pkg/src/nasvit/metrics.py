"""Confusion matrix, one-vs-rest metrics, and CSV/SVG report writers.

All averages are macro (unweighted mean over classes). A metric whose
denominator is zero is reported as 0 and flagged.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .dataset import CLASS_NAMES
from .errors import InputError

METRICS = ("sensitivity", "specificity", "precision", "f1")
CSV_HEADER = ["class", "tp", "fp", "fn", "tn", *METRICS]

# Reference rows, verbatim from the published comparison table.
REFERENCE_ROWS = (
    ("NASNet-ViT", "98.9", "0.99", "0.985", "0.988", "0.99", "12.4", "25.6"),
    ("MixNet-LD", "99.0", "0.99", "0.98", "0.98", "0.99", "14.7", "30.2"),
    ("D-ResNet", "85.2", "0.84", "0.85", "0.87", "0.86", "18.3", "50.1"),
    ("MobileNet", "84.5", "0.82", "0.83", "0.84", "0.85", "20.1", "48.3"),
    ("ResNet50", "82.1", "0.77", "0.81", "0.82", "0.81", "22.5", "60.5"),
)
COMPARISON_HEADER = [
    "model",
    "accuracy_pct",
    "sensitivity",
    "specificity",
    "f1",
    "recall",
    "computational_time_s",
    "model_size_mb",
    "source",
]


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    class_names: tuple[str, ...] = CLASS_NAMES

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class EvalReport:
    class_names: tuple[str, ...]
    tp: list[int]
    fp: list[int]
    fn: list[int]
    tn: list[int]
    per_class: dict[str, list[float]]
    macro: dict[str, float]
    accuracy: float
    samples: int
    flags: list[tuple[str, str]] = field(default_factory=list)


def confusion(pairs: Iterable[tuple[int, int]], num_classes: int = 5, class_names=None) -> ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    for i, (t, p) in enumerate(pairs):
        if not (0 <= int(t) < num_classes and 0 <= int(p) < num_classes):
            raise InputError(f"pair {i} = ({t}, {p}) has a class id outside [0, {num_classes})")
        counts[int(t), int(p)] += 1
    names = tuple(class_names) if class_names else (
        CLASS_NAMES if num_classes == len(CLASS_NAMES) else tuple(f"class{i}" for i in range(num_classes))
    )
    return ConfusionMatrix(counts, names)


def _ratio(num: int, den: int) -> tuple[float, bool]:
    return (num / den, False) if den else (0.0, True)


def metrics(cm: ConfusionMatrix) -> EvalReport:
    c = cm.counts
    total = int(c.sum())
    n = c.shape[0]
    tp = [int(c[k, k]) for k in range(n)]
    fn = [int(c[k, :].sum()) - tp[k] for k in range(n)]
    fp = [int(c[:, k].sum()) - tp[k] for k in range(n)]
    tn = [total - tp[k] - fn[k] - fp[k] for k in range(n)]
    per_class = {m: [] for m in METRICS}
    flags = []
    for k, name in enumerate(cm.class_names):
        values = {
            "sensitivity": _ratio(tp[k], tp[k] + fn[k]),
            "specificity": _ratio(tn[k], tn[k] + fp[k]),
            "precision": _ratio(tp[k], tp[k] + fp[k]),
        }
        prec, rec = values["precision"][0], values["sensitivity"][0]
        values["f1"] = _ratio(2 * prec * rec, prec + rec) if prec + rec else (0.0, True)
        for m in METRICS:
            per_class[m].append(values[m][0])
            if values[m][1]:
                flags.append((name, m))
    macro = {m: float(sum(per_class[m]) / n) for m in METRICS}
    accuracy = sum(tp) / total if total else 0.0
    return EvalReport(cm.class_names, tp, fp, fn, tn, per_class, macro, accuracy, total, flags)


def report_from_pairs(pairs, num_classes: int = 5, class_names=None) -> EvalReport:
    return metrics(confusion(pairs, num_classes, class_names))


def _f(x: float) -> str:
    return f"{x:.6f}"


def render_csv(r: EvalReport, cm: ConfusionMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for k, name in enumerate(r.class_names):
        w.writerow([name, r.tp[k], r.fp[k], r.fn[k], r.tn[k], *(_f(r.per_class[m][k]) for m in METRICS)])
    w.writerow(["macro_avg", sum(r.tp), sum(r.fp), sum(r.fn), sum(r.tn), *(_f(r.macro[m]) for m in METRICS)])
    w.writerow(["accuracy", "", "", "", "", _f(r.accuracy), "", "", ""])
    w.writerow([])
    w.writerow(["confusion_matrix", *cm.class_names])
    for k, name in enumerate(cm.class_names):
        w.writerow([name, *(int(v) for v in cm.counts[k])])
    w.writerow([])
    w.writerow(["zero_denominator_flags", "metric"])
    for name, m in r.flags:
        w.writerow([name, m])
    return buf.getvalue()


def emit_csv(r: EvalReport, cm: ConfusionMatrix, path) -> None:
    _write(path, render_csv(r, cm))


def parse_csv(text: str) -> dict:
    """Inverse of :func:`render_csv` for the metric rows and confusion block."""
    rows = list(csv.reader(io.StringIO(text)))
    if rows[0] != CSV_HEADER:
        raise InputError(f"unexpected header {rows[0]}")
    out = {"per_class": {}, "macro": {}, "accuracy": None, "confusion": []}
    i = 1
    while rows[i]:
        row = rows[i]
        if row[0] == "accuracy":
            out["accuracy"] = float(row[5])
        elif row[0] == "macro_avg":
            out["macro"] = {m: float(v) for m, v in zip(METRICS, row[5:])}
        else:
            out["per_class"][row[0]] = {
                **{k: int(v) for k, v in zip(("tp", "fp", "fn", "tn"), row[1:5])},
                **{m: float(v) for m, v in zip(METRICS, row[5:])},
            }
        i += 1
    i += 2
    while i < len(rows) and rows[i]:
        out["confusion"].append([int(v) for v in rows[i][1:]])
        i += 1
    return out


# ---------------------------------------------------------------------------
# SVG


def _fill(frac: float) -> str:
    # white (empty) -> dark blue (max count)
    lo, hi = np.array([255, 255, 255]), np.array([8, 48, 107])
    rgb = np.round(lo + (hi - lo) * frac).astype(int)
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def render_confusion_svg(cm: ConfusionMatrix, cell: int = 60) -> str:
    n = cm.counts.shape[0]
    margin = 120
    size = margin + n * cell + 20
    peak = int(cm.counts.max())
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}" font-family="sans-serif" font-size="12">'
    ]
    parts.append('<g class="axis-labels">')
    for k, name in enumerate(cm.class_names):
        cx = margin + k * cell + cell // 2
        cy = margin + k * cell + cell // 2
        parts.append(f'<text class="axis-label" x="{cx}" y="{margin - 8}" text-anchor="middle">{name}</text>')
        parts.append(f'<text class="axis-label" x="{margin - 8}" y="{cy}" text-anchor="end">{name}</text>')
    parts.append(f'<text class="axis-label" x="{margin + n * cell // 2}" y="16" text-anchor="middle">predicted</text>')
    parts.append(
        f'<text class="axis-label" x="16" y="{margin + n * cell // 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {margin + n * cell // 2})">true</text>'
    )
    parts.append("</g>")
    for i in range(n):
        for j in range(n):
            v = int(cm.counts[i, j])
            frac = v / peak if peak else 0.0
            x, y = margin + j * cell, margin + i * cell
            colour = "#ffffff" if frac > 0.5 else "#000000"
            parts.append(
                f'<rect class="cell" x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{_fill(frac)}" stroke="#888888"/>'
            )
            parts.append(
                f'<text class="count" x="{x + cell // 2}" y="{y + cell // 2 + 4}" '
                f'text-anchor="middle" fill="{colour}">{v}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_confusion_svg(cm: ConfusionMatrix, path) -> None:
    _write(path, render_confusion_svg(cm))


# ---------------------------------------------------------------------------
# comparison table


def render_comparison_table(r: EvalReport, time_s: str = "", size_mb: str = "") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARISON_HEADER)
    for row in REFERENCE_ROWS:
        w.writerow([*row, "paper-reported"])
    w.writerow(
        [
            "this-run (macro)",
            f"{100 * r.accuracy:.1f}",
            _f(r.macro["sensitivity"]),
            _f(r.macro["specificity"]),
            _f(r.macro["f1"]),
            _f(r.macro["sensitivity"]),
            time_s,
            size_mb,
            "measured",
        ]
    )
    return buf.getvalue()


def emit_comparison_table(r: EvalReport, path, time_s: str = "", size_mb: str = "") -> None:
    _write(path, render_comparison_table(r, time_s, size_mb))


def _write(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8", newline="")
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc
