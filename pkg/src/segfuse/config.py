"""Flat dotted-key configuration: defaults, `key = value` files, and
command-line overrides of the same names."""

from __future__ import annotations

from pathlib import Path

from .boundary import BclConfig
from .datagen import SceneSpec
from .fusion import GLOBAL, LmfmConfig
from .network import NetConfig

DEFAULTS: dict[str, object] = {
    # synthetic dataset
    "data.height": 128,
    "data.width": 128,
    "data.num_classes": 4,
    "data.shapes_min": 3,
    "data.shapes_max": 6,
    "data.shape_kinds": "rectangle,circle,stripe",
    "data.noise_sigma": 0.10,
    "data.seed": 7,
    "data.count": 200,
    "data.ignore_index": 255,
    # network
    "net.stem_channels": 8,
    "net.high_channels": 16,
    "net.low_channels": 32,
    "net.blocks_per_stage": 1,
    "net.head_channels": 32,
    "net.divisibility": 16,
    # multi-scale fusion module
    "lmfm.branch_channels": 8,
    "lmfm.scales": "1,2,4,global",
    "lmfm.connection_mode": "interval",
    # boundary-corrected loss
    "bcl.step": 1,
    "bcl.lambda1": 0.5,
    "bcl.lambda2": 0.5,
    "bcl.alpha": 0.4,
    "bcl.nms_window": 3,
    "bcl.keep_fraction": 0.25,
    "bcl.min_kept": 64,
    # trainer
    "train.lr": 0.05,
    "train.momentum": 0.9,
    "train.weight_decay": 0.0005,
    "train.batch_size": 8,
    "train.crop": 64,
    "train.flip_prob": 0.5,
    "train.iterations": 2000,
    "train.poly_power": 0.9,
    "train.seed": 1,
    "train.eval_interval": 0,
    "train.checkpoint_interval": 0,
    "train.manifest": "",
    "train.eval_manifest": "",
    # evaluation / reporting
    "eval.boundary_tolerance": 2,
    "report.figures": True,
}


def default_config() -> dict[str, object]:
    return dict(DEFAULTS)


def _parse_value(raw: str, like: object) -> object:
    raw = raw.strip()
    if isinstance(like, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def set_key(cfg: dict, key: str, raw: str) -> None:
    if key not in cfg:
        raise KeyError(f"unknown config key {key!r}")
    cfg[key] = _parse_value(raw, DEFAULTS[key])


def load_config_file(cfg: dict, path) -> dict:
    """Apply `key = value` lines from ``path``; '#' starts a comment."""
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = stripped.split("=", 1)
        set_key(cfg, key.strip(), raw)
    return cfg


def apply_overrides(cfg: dict, pairs: list[tuple[str, str]]) -> dict:
    for key, raw in pairs:
        set_key(cfg, key, raw)
    return cfg


def scene_spec(cfg: dict) -> SceneSpec:
    return SceneSpec(
        height=cfg["data.height"],
        width=cfg["data.width"],
        num_classes=cfg["data.num_classes"],
        shapes_min=cfg["data.shapes_min"],
        shapes_max=cfg["data.shapes_max"],
        shape_kinds=tuple(cfg["data.shape_kinds"].split(",")),
        noise_sigma=cfg["data.noise_sigma"],
        seed=cfg["data.seed"],
        ignore_index=cfg["data.ignore_index"],
    )


def _parse_scales(raw: str) -> tuple:
    out = []
    for token in raw.split(","):
        token = token.strip()
        if token == GLOBAL:
            out.append(GLOBAL)
        else:
            out.append(int(token))
    return tuple(out)


def lmfm_config(cfg: dict) -> LmfmConfig:
    return LmfmConfig(
        in_channels=cfg["net.low_channels"],
        branch_channels=cfg["lmfm.branch_channels"],
        out_channels=cfg["net.high_channels"],
        scales=_parse_scales(cfg["lmfm.scales"]),
        connection_mode=cfg["lmfm.connection_mode"],
    )


def net_config(cfg: dict) -> NetConfig:
    return NetConfig(
        num_classes=cfg["data.num_classes"],
        stem_channels=cfg["net.stem_channels"],
        high_channels=cfg["net.high_channels"],
        low_channels=cfg["net.low_channels"],
        blocks_per_stage=cfg["net.blocks_per_stage"],
        head_channels=cfg["net.head_channels"],
        divisibility=cfg["net.divisibility"],
        lmfm=lmfm_config(cfg),
    )


def bcl_config(cfg: dict) -> BclConfig:
    return BclConfig(
        step=cfg["bcl.step"],
        lambda1=cfg["bcl.lambda1"],
        lambda2=cfg["bcl.lambda2"],
        alpha=cfg["bcl.alpha"],
        nms_window=cfg["bcl.nms_window"],
        keep_fraction=cfg["bcl.keep_fraction"],
        min_kept=cfg["bcl.min_kept"],
    )
