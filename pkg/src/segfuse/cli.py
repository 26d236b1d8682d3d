"""Command-line entry point.

Subcommands: generate-data, train, eval, gradcheck, benchmark, export.
Every dotted config key can be overridden on the command line, e.g.
``segfuse train --out runs/a --bcl.step 2 --train.iterations 500``.
Exits 0 on success; failures print one `error: ...` line and exit 1.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import config as cfgmod
from .metrics import format_report


def _split_overrides(extras: list[str]) -> list[tuple[str, str]]:
    pairs = []
    i = 0
    while i < len(extras):
        token = extras[i]
        if not token.startswith("--"):
            raise ValueError(f"unexpected argument {token!r}")
        body = token[2:]
        if "=" in body:
            key, raw = body.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extras):
                raise ValueError(f"override {token!r} is missing a value")
            key, raw = body, extras[i + 1]
            i += 2
        pairs.append((key, raw))
    return pairs


def _build_config(args, extras: list[str]) -> dict:
    cfg = cfgmod.default_config()
    if args.config:
        cfgmod.load_config_file(cfg, args.config)
    cfgmod.apply_overrides(cfg, _split_overrides(extras))
    if args.seed is not None:
        cfg["data.seed"] = args.seed
        cfg["train.seed"] = args.seed
    return cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a key = value config file")
    p.add_argument("--seed", type=int, help="sets data.seed and train.seed")
    p.add_argument("--out", help="output directory")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic dataset and manifest")
    _add_common(p)
    p.add_argument("--count", type=int, help="number of samples (default data.count)")

    p = sub.add_parser("train", help="train a network from a manifest")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    _add_common(p)
    p.add_argument("--instances", type=int, default=5)

    p = sub.add_parser("benchmark", help="parameter/FLOP accounting and forward timing")
    _add_common(p)

    p = sub.add_parser("export", help="write color-mapped prediction images")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)

    return parser


def run(argv: list[str]) -> int:
    parser = make_parser()
    args, extras = parser.parse_known_args(argv)
    cfg = _build_config(args, extras)

    if args.command == "generate-data":
        from .datagen import write_dataset

        if not args.out:
            raise ValueError("generate-data requires --out")
        spec = cfgmod.scene_spec(cfg)
        count = args.count if args.count is not None else cfg["data.count"]
        manifest = write_dataset(spec, count, args.out)
        print(f"manifest={manifest}")
        return 0

    if args.command == "train":
        from .train import train

        if not args.out:
            raise ValueError("train requires --out")
        result = train(cfg, args.out)
        print(f"checkpoint={result.checkpoint_path}")
        print(f"trace={result.trace_path}")
        return 0

    if args.command == "eval":
        from .train import evaluate

        evaluate(args.checkpoint, args.manifest, cfg, out_dir=args.out)
        return 0

    if args.command == "gradcheck":
        from .gradcheck import main_report

        text, ok = main_report(instances=args.instances)
        print(text, end="")
        return 0 if ok else 1

    if args.command == "benchmark":
        from .train import benchmark

        report = benchmark(cfg)
        text = format_report(report)
        print(text, end="")
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / "benchmark.txt").write_text(text)
        return 0

    if args.command == "export":
        from .train import export_predictions

        if not args.out:
            raise ValueError("export requires --out")
        paths = export_predictions(args.checkpoint, args.manifest, cfg, args.out)
        print(f"exported={len(paths)}")
        return 0

    raise ValueError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return run(argv)
    except Exception as exc:  # noqa: BLE001 - single CLI failure funnel
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
