"""Command-line surface.

Subcommands: prepare, stats, pretrain, finetune, evaluate, recommend, sweep.
Every training-config field is exposed both as a ``key = value`` config file
entry (--config) and as a flag (flag beats file beats default). Exit codes:
0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields

from . import data as data_mod
from .checkpoint import load_checkpoint
from .config import TrainConfig, parse_config_file, resolve_config
from .engine import checkpoint_model, finetune, model_from_checkpoint, pretrain, retrieve
from .metrics import SweepGrid, evaluate, sweep, sweep_csv

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _flag_name(field_name: str) -> str:
    if field_name == "lam":
        return "--lambda"
    return "--" + field_name.replace("_", "-")


def _add_config_flags(parser):
    group = parser.add_argument_group("training config",
                                      "override config-file values")
    for f in fields(TrainConfig):
        kwargs = {"dest": f.name, "default": None}
        if f.type == "bool":
            kwargs["type"] = lambda v: v.lower() in ("true", "1", "yes", "on")
            kwargs["metavar"] = "BOOL"
        elif f.type == "int":
            kwargs["type"] = int
        elif f.type == "float":
            kwargs["type"] = float
        else:
            kwargs["type"] = str
        group.add_argument(_flag_name(f.name), **kwargs)


def _add_common(parser):
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--out", help="output directory", default=".")
    _add_config_flags(parser)


def _resolved_config(args) -> TrainConfig:
    file_values = parse_config_file(args.config) if args.config else {}
    flag_values = {f.name: getattr(args, f.name, None) for f in fields(TrainConfig)}
    return resolve_config(file_values, flag_values)


def build_parser() -> _Parser:
    parser = _Parser(prog="roundrec",
                     description="Multi-round retrieval for sequential "
                                 "recommendation")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("prepare", help="ingest, filter, split, and serialize "
                                       "a dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--sep", choices=["tab", "comma"], default="tab")
    p.add_argument("--header", action="store_true")
    p.add_argument("--min-count", type=int, default=5)
    p.add_argument("--min-timestamp", type=int, default=None)
    p.add_argument("--out", default=".")

    p = sub.add_parser("stats", help="print dataset statistics as JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--sep", choices=["tab", "comma"], default="tab")
    p.add_argument("--header", action="store_true")
    p.add_argument("--min-count", type=int, default=None,
                   help="apply k-core filtering before counting")

    p = sub.add_parser("pretrain", help="train the bare backbone")
    p.add_argument("--data", required=True)
    p.add_argument("--verbose", action="store_true")
    _add_common(p)

    p = sub.add_parser("finetune", help="train the multi-round model")
    p.add_argument("--data", required=True)
    p.add_argument("--base", default=None,
                   help="pretrained checkpoint; omit to train from scratch")
    p.add_argument("--verbose", action="store_true")
    _add_common(p)

    p = sub.add_parser("evaluate", help="full-candidate evaluation of a "
                                        "checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["valid", "test"], default="test")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--per-round", action="store_true")
    p.add_argument("--out", default=None,
                   help="directory for the JSON-lines report")

    p = sub.add_parser("recommend", help="print top-K items for users")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--users", required=True,
                   help="comma-separated raw user ids")
    p.add_argument("--k", type=int, default=None)

    p = sub.add_parser("sweep", help="finetune+evaluate over a (T, lambda) grid")
    p.add_argument("--data", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--t-values", default="3,4,5,6,7,8")
    p.add_argument("--lambda-values", dest="lambda_values",
                   default="0.1,0.3,0.5,0.7,0.9")
    _add_common(p)
    return parser


def _cmd_prepare(args) -> int:
    sep = "\t" if args.sep == "tab" else ","
    log = data_mod.load_interactions(args.input, sep=sep, header=args.header)
    if args.min_timestamp is not None:
        log = data_mod.filter_min_timestamp(log, args.min_timestamp)
    log = data_mod.kcore_filter(log, min_count=args.min_count)
    split = data_mod.build_split(log)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "dataset.json")
    data_mod.save_dataset(split, path)
    print(json.dumps({"dataset": path, "users": split.n_users,
                      "items": split.n_items}, sort_keys=True))
    return 0


def _cmd_stats(args) -> int:
    sep = "\t" if args.sep == "tab" else ","
    log = data_mod.load_interactions(args.input, sep=sep, header=args.header)
    if args.min_count is not None:
        log = data_mod.kcore_filter(log, min_count=args.min_count)
    print(data_mod.stats(log).to_json())
    return 0


def _cmd_pretrain(args) -> int:
    cfg = _resolved_config(args)
    split = data_mod.load_dataset(args.data)
    model, log = pretrain(split, cfg, quiet=not args.verbose)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "checkpoint")
    checkpoint_model(model, "pretrained", log.best_epoch, path)
    print(json.dumps({"checkpoint": path, "best_epoch": log.best_epoch,
                      "best_valid_hr": log.best_hr}, sort_keys=True))
    return 0


def _cmd_finetune(args) -> int:
    cfg = _resolved_config(args)
    split = data_mod.load_dataset(args.data)
    base = load_checkpoint(args.base) if args.base else None
    model, log = finetune(split, cfg, base, quiet=not args.verbose)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "checkpoint")
    checkpoint_model(model, "finetuned", log.best_epoch, path)
    print(json.dumps({"checkpoint": path, "best_epoch": log.best_epoch,
                      "best_valid_hr": log.best_hr}, sort_keys=True))
    return 0


def _cmd_evaluate(args) -> int:
    split = data_mod.load_dataset(args.data)
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    report = evaluate(model, split, phase=args.split, k=args.k,
                      per_round=args.per_round, epoch=ckpt.epoch)
    line = report.to_json_line()
    print(line)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.jsonl"), "a",
                  encoding="utf-8") as fh:
            fh.write(line + "\n")
    return 0


def _cmd_recommend(args) -> int:
    split = data_mod.load_dataset(args.data)
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    k = args.k if args.k is not None else model.config.eval_k
    for raw_user in args.users.split(","):
        raw_user = raw_user.strip()
        if raw_user not in split.vocab.user_to_id:
            raise ValueError(f"unknown user {raw_user!r}")
        user = split.vocab.user_to_id[raw_user]
        history = split.train[user] + [split.valid[user], split.test[user]]
        result = retrieve(history, model, k, exclude=set(history))
        items = [split.vocab.items[item - 1] for item in result.items]
        print(json.dumps({"user": raw_user, "items": items}, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    cfg = _resolved_config(args)
    split = data_mod.load_dataset(args.data)
    base = load_checkpoint(args.base)
    grid = SweepGrid(t_values=[int(v) for v in args.t_values.split(",")],
                     lam_values=[float(v) for v in args.lambda_values.split(",")])
    rows = sweep(split, base, grid, cfg,
                 warn=lambda msg: print(msg, file=sys.stderr))
    csv = sweep_csv(rows)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "sweep.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(csv)
    print(csv, end="")
    return 0


_COMMANDS = {
    "prepare": _cmd_prepare,
    "stats": _cmd_stats,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "evaluate": _cmd_evaluate,
    "recommend": _cmd_recommend,
    "sweep": _cmd_sweep,
}


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_ERROR
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    # Seed precedence follows the config machinery; --seed is part of it.
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"roundrec: error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


def main() -> None:
    sys.exit(cli())
