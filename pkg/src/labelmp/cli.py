"""Command-line surface: train, eval, and explain.

Exit codes: 0 ok, 2 usage error, 3 checkpoint/config mismatch, 4 bad
sample, 5 data error. Relative --data/--schema paths are resolved against
$LABELMP_DATA_ROOT when it is set. Flag values beat config-file values
(`--config`, key=value lines), which beat built-in defaults.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .data import DataError, Dataset, ParseError, load_schema, parse_dataset, split
from .explain import build_explain_record, write_explain
from .graphs import LabelGraph, build_cooccurrence, load_adjacency
from .metrics import METRIC_NAMES
from .model import (
    CheckpointError,
    LampConfig,
    LampModel,
    MlpBaseline,
    load_checkpoint,
)
from .trainer import (
    AUX_WEIGHT_GRID,
    TrainConfig,
    evaluate,
    predict,
    select_all_thresholds,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CHECKPOINT = 3
EXIT_SAMPLE = 4
EXIT_DATA = 5

DATA_ROOT_VAR = "LABELMP_DATA_ROOT"

TRAIN_DEFAULTS = {
    "variant": "fc", "fmp": "off", "d": 512, "heads": 4, "steps": 2,
    "lambda": "0.1", "dropout": 0.2, "lr": 2e-4, "batch": 32, "epochs": 50,
    "seed": 0, "patience": 10, "val_metric": "ebf1", "precision": "float32",
    "model": "lamp", "max_len": 500,
}


class UsageError(Exception):
    pass


def _resolve(path_text: str) -> Path:
    path = Path(path_text)
    root = os.environ.get(DATA_ROOT_VAR)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _read_config_file(path: Path) -> dict:
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _merged(args, key: str, cast):
    """Flag > config file > default."""
    flag = getattr(args, key)
    if flag is not None:
        return cast(flag)
    if args._config_values and key in args._config_values:
        return cast(args._config_values[key])
    return cast(TRAIN_DEFAULTS[key])


def load_splits(data_path: Path, schema):
    """A directory means pre-split train/val/test files (preferred); a
    single file is split 0.8/0.1/0.1 deterministically."""
    if data_path.is_dir():
        parts = []
        for name in ("train.txt", "val.txt", "test.txt"):
            part = data_path / name
            if not part.exists():
                raise DataError(f"pre-split directory {data_path} is missing {name}")
            parts.append(parse_dataset(part, schema))
        return tuple(parts)
    dataset = parse_dataset(data_path, schema)
    return split(dataset, (0.8, 0.1, 0.1), seed=0)


def _load_schema_or_usage(args):
    if args.schema is None:
        raise UsageError("--schema is required")
    schema_path = _resolve(args.schema)
    if not schema_path.exists():
        raise UsageError(f"--schema: no such file: {schema_path}")
    return load_schema(schema_path)


def cmd_train(args) -> int:
    schema = _load_schema_or_usage(args)
    if args.data is None:
        raise UsageError("--data is required")
    train_ds, val_ds, _ = load_splits(_resolve(args.data), schema)

    variant = _merged(args, "variant", str)
    prior = args.prior_graph
    if variant == "pr" and prior is None:
        raise UsageError("--variant pr needs --prior-graph (a path or 'cooccur')")
    if variant != "pr" and prior is not None:
        raise UsageError(f"--prior-graph conflicts with --variant {variant}")

    label_graph = None
    if variant == "pr":
        if prior == "cooccur":
            label_graph = build_cooccurrence(train_ds.label_sets(), schema.labels)
        else:
            label_graph = load_adjacency(_resolve(prior), schema.labels)
    input_graph = None
    if args.input_graph:
        input_graph = load_adjacency(_resolve(args.input_graph), schema.features)

    lam_text = str(_merged(args, "lambda", str))
    sweep = lam_text == "sweep"
    aux_weight = 0.0 if sweep else float(lam_text)

    def make_config(aux):
        return LampConfig(
            labels=schema.labels, features=schema.features,
            input_kind=schema.input_kind, dim=_merged(args, "d", int),
            heads=_merged(args, "heads", int), steps=_merged(args, "steps", int),
            aux_weight=aux, dropout=_merged(args, "dropout", float),
            use_fmp=_merged(args, "fmp", str) == "on",
            graph_mode=variant, max_len=schema.max_len,
            precision=_merged(args, "precision", str),
            seed=_merged(args, "seed", int))

    def make_model(aux):
        if _merged(args, "model", str) == "mlp":
            return MlpBaseline(make_config(aux))
        return LampModel(make_config(aux), label_graph=label_graph,
                         input_graph=input_graph)

    out_path = Path(args.out)
    train_config = TrainConfig(
        epochs=_merged(args, "epochs", int), batch_size=_merged(args, "batch", int),
        lr=_merged(args, "lr", float), patience=_merged(args, "patience", int),
        val_metric=_merged(args, "val_metric", str), seed=_merged(args, "seed", int),
        checkpoint_path=str(out_path), log_path=args.log or str(out_path) + ".log")

    if sweep:
        from .trainer import sweep_aux_weight
        weight, model, report = sweep_aux_weight(make_model, train_ds, val_ds,
                                                 train_config, AUX_WEIGHT_GRID)
        print(f"sweep picked aux weight {weight}")
    else:
        model = make_model(aux_weight)
        report = train(model, train_ds, val_ds, train_config)
    print(f"best epoch {report.best_epoch}: val {train_config.val_metric} "
          f"{report.best_score:.4f} -> {out_path}")
    return EXIT_OK


def _check_schema_match(model, schema):
    cfg = model.config
    if (cfg.labels, cfg.features, cfg.input_kind) != (schema.labels, schema.features,
                                                      schema.input_kind):
        raise CheckpointError(
            f"checkpoint was trained for L={cfg.labels} delta={cfg.features} "
            f"kind={cfg.input_kind}; schema says L={schema.labels} "
            f"delta={schema.features} kind={schema.input_kind}")


def cmd_eval(args) -> int:
    schema = _load_schema_or_usage(args)
    model = load_checkpoint(_resolve(args.ckpt))
    _check_schema_match(model, schema)
    _, val_ds, test_ds = load_splits(_resolve(args.data), schema)
    thresholds = select_all_thresholds(val_ds.target_matrix(),
                                       predict(model, val_ds, args.batch))
    report = evaluate(model, test_ds, thresholds, args.batch)
    text = report.to_text()
    print(text, end="")
    if args.report:
        Path(args.report).write_text(text)
    return EXIT_OK


def cmd_explain(args) -> int:
    schema = _load_schema_or_usage(args)
    model = load_checkpoint(_resolve(args.ckpt))
    _check_schema_match(model, schema)
    if not isinstance(model, LampModel):
        raise UsageError("explain needs a message-passing checkpoint, not the baseline")
    _, _, test_ds = load_splits(_resolve(args.data), schema)
    try:
        record = build_explain_record(model, test_ds, args.sample)
    except IndexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SAMPLE
    label_filter = None
    if args.labels:
        label_filter = sorted({int(tok) for tok in args.labels.split(",")})
        if any(i < 0 or i >= schema.labels for i in label_filter):
            raise UsageError("--labels: id out of range")
    paths = write_explain(record, args.out_dir, label_filter)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="labelmp",
        description="attention message passing for multi-label classification")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write a checkpoint")
    p_train.add_argument("--data", help="dataset file or pre-split directory")
    p_train.add_argument("--schema", help="schema file (key=value)")
    p_train.add_argument("--variant", choices=("el", "fc", "pr"))
    p_train.add_argument("--prior-graph", help="edge-list path or 'cooccur' (pr only)")
    p_train.add_argument("--fmp", choices=("on", "off"))
    p_train.add_argument("--input-graph", help="edge list over feature ids for FMP")
    p_train.add_argument("--d", type=int, help="embedding width")
    p_train.add_argument("--heads", type=int)
    p_train.add_argument("--steps", type=int)
    p_train.add_argument("--lambda", dest="lambda_", metavar="WEIGHT",
                         help="intermediate loss weight, or 'sweep'")
    p_train.add_argument("--dropout", type=float)
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--batch", type=int)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--patience", type=int)
    p_train.add_argument("--val-metric", choices=METRIC_NAMES)
    p_train.add_argument("--precision", choices=("float32", "float64"))
    p_train.add_argument("--model", choices=("lamp", "mlp"),
                         help="mlp trains the mean-embedding baseline")
    p_train.add_argument("--config", help="key=value config file (flags win)")
    p_train.add_argument("--log", help="training log path (default <out>.log)")
    p_train.add_argument("--out", required=True, help="checkpoint path")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="select thresholds on val, score test")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--schema", required=True)
    p_eval.add_argument("--batch", type=int, default=32)
    p_eval.add_argument("--report", help="write the metric report here")
    p_eval.set_defaults(func=cmd_eval)

    p_explain = sub.add_parser("explain", help="export interpretability traces")
    p_explain.add_argument("--ckpt", required=True)
    p_explain.add_argument("--data", required=True)
    p_explain.add_argument("--schema", required=True)
    p_explain.add_argument("--sample", type=int, required=True,
                           help="test-split sample index")
    p_explain.add_argument("--labels", help="comma-separated label ids to plot")
    p_explain.add_argument("--out-dir", required=True)
    p_explain.set_defaults(func=cmd_explain)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args._config_values = None
    if getattr(args, "config", None):
        try:
            args._config_values = _read_config_file(Path(args.config))
        except OSError as exc:
            print(f"error: --config: {exc}", file=sys.stderr)
            return EXIT_USAGE
    if hasattr(args, "lambda_"):
        setattr(args, "lambda", args.lambda_)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (ParseError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
