"""Trainer, evaluator, prediction export, and the cost/speed benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .boundary import loss_components
from .datagen import DEFAULT_COLORS, Sample, load_dataset, save_image_ppm
from .labels import LabelMap
from .metrics import (
    ConfusionMatrix,
    accumulate,
    boundary_match_counts,
    format_report,
    fscore_from_counts,
    miou,
)
from .network import NetParams, build, count_cost, forward, load_checkpoint, restore, save_checkpoint
from .ops import SgdOptimizer
from .tensor import NonFiniteError, Tape, Tensor, backward

# Fixed palette for exported predictions, independent of scene colors.
EXPORT_PALETTE = DEFAULT_COLORS


def poly_lr(base_lr: float, iteration: int, max_iterations: int, power: float) -> float:
    """base_lr * (1 - iter/max_iter)^power; equals base_lr at iteration 0."""
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    return base_lr * (1.0 - iteration / max_iterations) ** power


def augment(image: np.ndarray, label: np.ndarray, crop: int,
            flip_prob: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random crop plus random horizontal flip, applied to both arrays."""
    _, h, w = image.shape
    if crop > h or crop > w:
        raise ValueError(f"crop {crop} exceeds image {h}x{w}")
    y0 = int(rng.integers(0, h - crop + 1))
    x0 = int(rng.integers(0, w - crop + 1))
    img = image[:, y0 : y0 + crop, x0 : x0 + crop]
    lab = label[y0 : y0 + crop, x0 : x0 + crop]
    if rng.random() < flip_prob:
        img = img[:, :, ::-1]
        lab = lab[:, ::-1]
    return np.ascontiguousarray(img), np.ascontiguousarray(lab)


@dataclass
class TrainResult:
    net: NetParams
    trace: list[str]
    checkpoint_path: Path
    trace_path: Path


class TrainError(RuntimeError):
    pass


def train(cfg: dict, out_dir, dataset: list[Sample] | None = None) -> TrainResult:
    """Run the training loop described by the dotted-key config.

    Writes one trace line per iteration plus a final checkpoint under
    ``out_dir``. Fully deterministic for a fixed config and dataset.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    net_cfg = cfgmod.net_config(cfg)
    bcl_cfg = cfgmod.bcl_config(cfg)
    ignore = cfg["data.ignore_index"]

    if dataset is None:
        manifest = cfg["train.manifest"]
        if not manifest:
            raise TrainError("no training data: set train.manifest or pass a dataset")
        dataset = load_dataset(manifest, cfg["data.num_classes"], ignore)

    crop = cfg["train.crop"]
    net_cfg.check_input(crop, crop)
    batch_size = cfg["train.batch_size"]
    if batch_size < 1:
        raise TrainError("train.batch_size must be >= 1")
    iterations = cfg["train.iterations"]
    if iterations < 0:
        raise TrainError("train.iterations must be >= 0")
    base_lr = cfg["train.lr"]
    if base_lr <= 0:
        raise TrainError("train.lr must be > 0")

    net = build(net_cfg, cfg["train.seed"])
    opt = SgdOptimizer(net.named_parameters(), cfg["train.momentum"], cfg["train.weight_decay"])
    rng = np.random.default_rng(cfg["train.seed"])

    order: list[int] = []
    trace: list[str] = []

    def next_batch_indices() -> list[int]:
        nonlocal order
        picked = []
        while len(picked) < batch_size:
            if not order:
                order = list(rng.permutation(len(dataset)))
            picked.append(order.pop(0))
        return picked

    ckpt_interval = cfg["train.checkpoint_interval"]
    for it in range(iterations):
        lr = poly_lr(base_lr, it, iterations, cfg["train.poly_power"])
        imgs, labs = [], []
        for idx in next_batch_indices():
            sample = dataset[idx]
            img, lab = augment(sample.image, sample.label.labels, crop,
                               cfg["train.flip_prob"], rng)
            imgs.append(img)
            labs.append(lab)
        x = Tensor(np.stack(imgs))
        gt = np.stack(labs)
        try:
            with Tape():
                logits = forward(x, net, mode="train")
                loss, lce, lb = loss_components(logits, gt, bcl_cfg, ignore)
                backward(loss)
        except NonFiniteError as exc:
            raise TrainError(f"non-finite loss at iteration {it}: {exc}") from exc
        opt.step(lr)
        opt.zero_grad()
        trace.append(f"iter={it} lce={lce!r} lb={lb!r} lr={lr!r}")
        if ckpt_interval and (it + 1) % ckpt_interval == 0:
            save_checkpoint(out_dir / f"ckpt_{it + 1:06d}.bin", net)

    ckpt_path = out_dir / "ckpt_final.bin"
    save_checkpoint(ckpt_path, net)
    trace_path = out_dir / "trace.txt"
    trace_path.write_text("\n".join(trace) + ("\n" if trace else ""))
    if cfg["report.figures"] and trace:
        from .report import render_training_curves

        render_training_curves(trace, out_dir / "trace.png")
    return TrainResult(net=net, trace=trace, checkpoint_path=ckpt_path, trace_path=trace_path)


def predict_label(net: NetParams, image: np.ndarray) -> np.ndarray:
    """Eval-mode forward on one [3,H,W] image; argmax ties go to the
    lowest class index."""
    logits = forward(Tensor(image[None]), net, mode="eval")
    return np.argmax(logits.data[0], axis=0)


def evaluate_net(net: NetParams, dataset: list[Sample], cfg: dict) -> dict:
    """Confusion-matrix metrics plus the aggregate boundary F-score."""
    if not dataset:
        raise ValueError("empty evaluation dataset")
    m = cfg["data.num_classes"]
    ignore = cfg["data.ignore_index"]
    tol = cfg["eval.boundary_tolerance"]
    cm = ConfusionMatrix(m)
    counts = np.zeros(4, dtype=np.int64)
    for sample in dataset:
        pred = predict_label(net, sample.image)
        accumulate(cm, pred, sample.label.labels, ignore)
        counts += np.asarray(boundary_match_counts(pred, sample.label.labels, tol, ignore))
    per_class, mean = miou(cm)
    precision, recall, f1 = fscore_from_counts(*counts)
    report: dict[str, object] = {"images": len(dataset), "pixels": cm.total}
    for c, iou in enumerate(per_class):
        report[f"iou_class_{c}"] = float("nan") if iou is None else iou
    report["miou"] = mean
    report["boundary_precision"] = precision
    report["boundary_recall"] = recall
    report["boundary_f1"] = f1
    report["boundary_tolerance"] = tol
    return report


def evaluate(checkpoint_path, manifest_path, cfg: dict, out_dir=None) -> dict:
    """Load a checkpoint (digest-checked against the config), run eval-mode
    forwards over the manifest, and emit the metrics report."""
    net_cfg = cfgmod.net_config(cfg)
    net = build(net_cfg, seed=0)
    restore(net, checkpoint_path)
    dataset = load_dataset(manifest_path, cfg["data.num_classes"], cfg["data.ignore_index"])
    report = evaluate_net(net, dataset, cfg)
    text = format_report(report)
    print(text, end="")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.txt").write_text(text)
        if cfg["report.figures"]:
            from .report import render_class_iou

            render_class_iou(report, cfg["data.num_classes"], out_dir / "metrics.png")
    return report


def export_predictions(checkpoint_path, manifest_path, cfg: dict, out_dir) -> list[Path]:
    """Write color-mapped prediction PPMs for every manifest sample."""
    net_cfg = cfgmod.net_config(cfg)
    net = build(net_cfg, seed=0)
    restore(net, checkpoint_path)
    dataset = load_dataset(manifest_path, cfg["data.num_classes"], cfg["data.ignore_index"])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    palette = np.asarray(EXPORT_PALETTE)
    paths = []
    for i, sample in enumerate(dataset):
        pred = predict_label(net, sample.image)
        colored = palette[pred].transpose(2, 0, 1)
        path = out_dir / f"pred_{i:05d}.ppm"
        save_image_ppm(path, colored)
        paths.append(path)
    return paths


def benchmark(cfg: dict, repeats: int = 5) -> dict:
    """Parameter/FLOP accounting plus wall-clock per eval forward."""
    net_cfg = cfgmod.net_config(cfg)
    h, w = cfg["data.height"], cfg["data.width"]
    params, flops = count_cost(net_cfg, h, w)
    net = build(net_cfg, seed=0)
    rng = np.random.default_rng(0)
    x = Tensor(rng.random((1, 3, h, w)))
    forward(x, net, mode="train")  # populate BN stats and trigger JIT
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        forward(x, net, mode="eval")
        times.append(time.perf_counter() - t0)
    return {
        "input": f"{h}x{w}",
        "params": params,
        "flops": flops,
        "built_params": net.param_count(),
        "forward_seconds_median": float(np.median(times)),
    }


def run_ablation(cfg: dict, seeds: list[int], work_dir,
                 dataset_train: list[Sample], dataset_eval: list[Sample]) -> dict:
    """Train base / +fusion / +fusion+boundary over several seeds and
    collect eval mIoU and boundary F1 for each run."""
    variants = {
        "base": {"lmfm.connection_mode": "none", "bcl.alpha": 0.0},
        "fusion": {"lmfm.connection_mode": "interval", "bcl.alpha": 0.0},
        "fusion_boundary": {"lmfm.connection_mode": "interval", "bcl.alpha": cfg["bcl.alpha"]},
    }
    work_dir = Path(work_dir)
    table: dict[str, dict[str, list[float]]] = {
        name: {"miou": [], "boundary_f1": []} for name in variants
    }
    for name, overrides in variants.items():
        for seed in seeds:
            run_cfg = dict(cfg)
            run_cfg.update(overrides)
            run_cfg["train.seed"] = seed
            result = train(run_cfg, work_dir / f"{name}_seed{seed}", dataset=dataset_train)
            report = evaluate_net(result.net, dataset_eval, run_cfg)
            table[name]["miou"].append(report["miou"])
            table[name]["boundary_f1"].append(report["boundary_f1"])
    return table


def ablation_medians(table: dict) -> dict[str, dict[str, float]]:
    return {
        name: {metric: float(np.median(vals)) for metric, vals in metrics.items()}
        for name, metrics in table.items()
    }


def format_ablation(table: dict) -> str:
    """Human-readable ablation table with per-seed values and medians."""
    lines = [f"{'variant':18s} {'metric':12s} per-seed values -> median"]
    for name, metrics in table.items():
        for metric, vals in metrics.items():
            joined = " ".join(f"{v:.4f}" for v in vals)
            lines.append(f"{name:18s} {metric:12s} {joined} -> {float(np.median(vals)):.4f}")
    return "\n".join(lines) + "\n"
