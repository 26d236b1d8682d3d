"""Matplotlib figure rendering for the report paths (loss curves next to
the trace file, per-class IoU bars next to the metrics file, ablation
summaries)."""

from __future__ import annotations

import math
import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_TRACE_RE = re.compile(r"iter=(\d+) lce=([^ ]+) lb=([^ ]+) lr=([^ ]+)")


def parse_trace(lines: list[str]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    iters, lce, lb, lr = [], [], [], []
    for line in lines:
        m = _TRACE_RE.match(line.strip())
        if not m:
            raise ValueError(f"unparseable trace line: {line!r}")
        iters.append(int(m.group(1)))
        lce.append(float(m.group(2)))
        lb.append(float(m.group(3)))
        lr.append(float(m.group(4)))
    return np.array(iters), np.array(lce), np.array(lb), np.array(lr)


def render_training_curves(trace_lines: list[str], out_path) -> Path:
    iters, lce, lb, lr = parse_trace(trace_lines)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(iters, lce, label="cross-entropy", lw=1.0)
    if np.any(lb != 0):
        ax1.plot(iters, lb, label="boundary term", lw=1.0)
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(iters, lr, color="tab:green", lw=1.0)
    ax2.set_ylabel("learning rate")
    ax2.set_xlabel("iteration")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def render_class_iou(report: dict, num_classes: int, out_path) -> Path:
    ious = []
    for c in range(num_classes):
        v = report.get(f"iou_class_{c}", float("nan"))
        ious.append(0.0 if isinstance(v, float) and math.isnan(v) else float(v))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(num_classes), ious, color="tab:blue")
    ax.axhline(report.get("miou", 0.0), color="tab:red", ls="--",
               label=f"mIoU {report.get('miou', 0.0):.3f}")
    ax.set_xlabel("class")
    ax.set_ylabel("IoU")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def render_ablation(table: dict, out_path) -> Path:
    names = list(table)
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for ax, metric in zip(axes, ("miou", "boundary_f1")):
        medians = [float(np.median(table[n][metric])) for n in names]
        ax.bar(range(len(names)), medians, color="tab:purple")
        for i, name in enumerate(names):
            ax.scatter([i] * len(table[name][metric]), table[name][metric],
                       color="black", s=12, zorder=3)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=20)
        ax.set_title(metric)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path
