"""Command line entry points: train, transfer, infer.

Config files hold one key=value line per field of TrainConfig, values in
JSON form (strings quoted). Flags override file values, which override
the defaults.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import List, Optional

from .errors import SosnetError
from .model import ArchConfig
from .train import TrainConfig, train, transfer_train, infer

_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}


def read_config_file(path) -> dict:
    values = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {line!r} is not key=value")
        key, text = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = json.loads(text)
    return values


def _parse_shape(text: str):
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"shape {text!r} must look like 128x1024")
    return (int(parts[0]), int(parts[1]))


def _build_train_config(args) -> TrainConfig:
    values = read_config_file(args.config) if args.config else {}
    for key in ("batch_size", "learning_rate", "momentum", "epochs",
                "transfer_epochs", "seed", "stop_at_train_mse"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return TrainConfig(**values)


def _build_arch(args) -> Optional[ArchConfig]:
    if args.in_shape is None and args.out_shape is None:
        return None
    kwargs = {}
    if args.in_shape is not None:
        kwargs["in_shape"] = _parse_shape(args.in_shape)
    if args.out_shape is not None:
        kwargs["out_shape"] = _parse_shape(args.out_shape)
    return ArchConfig(**kwargs)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--transfer-epochs", dest="transfer_epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--stop-at-train-mse", dest="stop_at_train_mse",
                   type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sosnet",
        description="estimate sound-speed maps from channel data")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a network on a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="weights file to write")
    p.add_argument("--in-shape", dest="in_shape",
                   help="input HxW, default 128x1024")
    p.add_argument("--out-shape", dest="out_shape",
                   help="output HxW, default 384x384")
    _add_train_flags(p)

    p = sub.add_parser("transfer",
                       help="train a residual head on frozen weights")
    p.add_argument("--base", required=True, help="base weights file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="weights file to write")
    _add_train_flags(p)

    p = sub.add_parser("infer", help="write one map file per record")
    p.add_argument("--weights", required=True, help="weights file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("records", nargs="+", help="record files")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            cfg = _build_train_config(args)
            _, history = train(args.data, cfg, arch=_build_arch(args),
                               out_path=args.out)
            last = history[-1]
            print(f"wrote {args.out} after {len(history)} epochs, "
                  f"train mse {last['train_mse']:.6g}")
        elif args.command == "transfer":
            cfg = _build_train_config(args)
            _, history = transfer_train(args.base, args.data, cfg,
                                        out_path=args.out)
            last = history[-1]
            print(f"wrote {args.out} after {len(history)} epochs, "
                  f"train mse {last['train_mse']:.6g}")
        elif args.command == "infer":
            written = infer(args.records, args.weights, args.out)
            for path in written:
                print(path)
        return 0
    except (SosnetError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
