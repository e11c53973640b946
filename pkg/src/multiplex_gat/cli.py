"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure. Failures print one ``error: <kind>: <message>`` line
on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import datasets
from .config import ConfigError, RunConfig, resolve
from .graph import DataFormatError, graph_stats, ingest_categorical_table, read_categorical_table, \
    split_transductive, write_dataset
from .gradcheck import TOLERANCE, run_gradcheck
from .harness import (MetricsRecord, TrainResult, derived_seeds, evaluate_accuracy, export_embeddings, final_loss,
                      run_experiment, train_model, write_loss_trace, write_metrics)
from .models import build_context, load_checkpoint, save_checkpoint

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message} (try --help)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="multiplex-gat", description="Multiplex graph attention node classification.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def with_config(p):
        p.add_argument("--config", help="INI file with [data], [model] and [train] sections")
        p.add_argument("overrides", nargs="*", metavar="section.key=value", help="config overrides")
        p.add_argument("--dataset", help="registry key or dataset descriptor path (sets data.dataset)")
        p.add_argument("--out", default="runs", help="parent directory of run directories (default: runs)")

    p = sub.add_parser("ingest", parents=[common], help="convert a categorical table into a dataset directory")
    p.add_argument("--table", required=True, help="delimited table with a header row")
    p.add_argument("--label", required=True, help="name of the label column")
    p.add_argument("--output", required=True, help="directory to write the dataset into")
    p.add_argument("--missing-policy", default="drop-edges", choices=("drop-edges", "own-category"))
    p.add_argument("--delimiter", default=",")
    p.add_argument("--name", default="")

    p = sub.add_parser("stats", parents=[common], help="print node, layer, class and edge counts")
    p.add_argument("--dataset", required=True)
    p.add_argument("--root", help=f"data root for non-bundled datasets (default: ${datasets.DATA_ENV})")
    p.add_argument("--missing-policy", default="drop-edges", choices=("drop-edges", "own-category"))
    p.add_argument("--json", action="store_true", help="print JSON instead of text")

    p = sub.add_parser("train", parents=[common], help="train one model on one split (train.seed, train.train_frac)")
    with_config(p)

    p = sub.add_parser("experiment", parents=[common], help="repeated random splits for every train fraction")
    with_config(p)
    p.add_argument("--workers", type=int, default=1, help="worker processes for realizations (default 1)")

    p = sub.add_parser("export-embeddings", parents=[common], help="write node representations to CSV")
    with_config(p)
    p.add_argument("--run", help="directory of an earlier `train` run; reuse its config and checkpoint")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every op and both model losses")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    return parser


def _run_dir(parent, seed: int) -> Path:
    stamp = time.strftime("%Y%m%dT%H%M%S")
    base = Path(parent) / f"{stamp}-seed{seed}"
    path, n = base, 1
    while path.exists():
        n += 1
        path = base.with_name(f"{base.name}-{n}")
    path.mkdir(parents=True)
    return path


def _config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.dataset:
        overrides.append(f"data.dataset={args.dataset}")
    cfg = resolve(args.config, overrides)
    if not cfg.data.dataset:
        raise UsageError("no dataset given (set data.dataset or pass --dataset)")
    return cfg


def _load(cfg: RunConfig):
    return datasets.load(cfg.data.dataset, cfg.data.root or None, cfg.data.missing_policy)


def cmd_ingest(args) -> int:
    table, names, labels, classes = read_categorical_table(args.table, args.label, args.delimiter)
    g = ingest_categorical_table(table, labels, len(classes), args.missing_policy, attribute_names=names,
                                 name=args.name or Path(args.table).stem, class_names=classes)
    out = write_dataset(g, args.output)
    print(f"wrote {out} (N={g.n_nodes} L={g.n_layers} C={g.n_classes})")
    return EXIT_OK


def cmd_stats(args) -> int:
    g = datasets.load(args.dataset, args.root, args.missing_policy)
    stats = graph_stats(g)
    if args.json:
        doc = {"name": stats.name, "N": stats.n_nodes, "L": stats.n_layers, "C": stats.n_classes,
               "edges": stats.total_counted, "stored_directed": stats.total_stored,
               "counted_per_layer": stats.counted_edges, "class_counts": stats.class_counts}
        print(json.dumps(doc))
    else:
        print(stats.format())
    return EXIT_OK


def _train(cfg: RunConfig, g):
    t = cfg.train
    split = split_transductive(g.labeled_ids, t.train_frac, t.seed)
    result = train_model(g, cfg.model, split, t.seed, t.epochs, t.lr, t.weight_decay, None, t.early_stop,
                         t.patience, t.min_delta)
    return split, result


def cmd_train(args) -> int:
    cfg = _config(args)
    g = _load(cfg)
    run = _run_dir(args.out, cfg.train.seed)
    cfg.write(run / "config.cfg")
    split, result = _train(cfg, g)
    acc = evaluate_accuracy(result.logits(), g.labels, split.test_idx)
    record = MetricsRecord(0, cfg.train.seed, cfg.train.train_frac, acc, final_loss(result, g, split),
                           result.epochs, result.seconds)
    write_metrics([record], run / "metrics.csv")
    write_loss_trace(result.losses, run / "losses.csv")
    save_checkpoint(result.model, run / "checkpoint.npz")
    print(f"run={run} accuracy={acc:.4f} final_loss={record.final_loss:.6g} epochs={result.epochs}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _config(args)
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    experiment = cfg.experiment()
    g = _load(cfg)
    run = _run_dir(args.out, cfg.train.base_seed)
    cfg.write(run / "config.cfg")
    result = run_experiment(experiment, g, workers=args.workers, out_dir=run)
    for key, row in result.summary.items():
        mean = "nan" if row["mean"] is None else f"{row['mean']:.4f}"
        std = "nan" if row["std"] is None else f"{row['std']:.4f}"
        print(f"frac={key} mean={mean} std={std} runs={row['runs']} failed={row['failed']}")
    print(f"run={run}")
    bad = [r for r in result.records if r.status != "ok"]
    if bad:
        print(f"error: numerical: {len(bad)} of {len(result.records)} runs did not finish", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_export(args) -> int:
    if args.run:
        run = Path(args.run)
        cfg = resolve(run / "config.cfg", args.overrides)
        if not (run / "checkpoint.npz").exists():
            raise FileNotFoundError(f"no checkpoint.npz in {run}")
        g = _load(cfg)
        model = load_checkpoint(run / "checkpoint.npz")
        feat_seed, _ = derived_seeds(cfg.train.seed)
        result = TrainResult(model, model.make_features(g.n_nodes, feat_seed), build_context(g, cfg.model.variant),
                             [], 0, 0.0)
    else:
        cfg = _config(args)
        g = _load(cfg)
        run = _run_dir(args.out, cfg.train.seed)
        cfg.write(run / "config.cfg")
        _, result = _train(cfg, g)
        save_checkpoint(result.model, run / "checkpoint.npz")
    path = export_embeddings(result, run / "embeddings.csv")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    errors = run_gradcheck(args.seed, args.eps)
    width = max(map(len, errors))
    for name, err in errors.items():
        print(f"{name:<{width}}  {err:.3e}  {'ok' if err < TOLERANCE else 'FAIL'}")
    worst = max(errors.values())
    print(f"max_relative_error={worst:.3e} tolerance={TOLERANCE:g}")
    return EXIT_OK if worst < TOLERANCE else EXIT_NUMERIC


COMMANDS = {"ingest": cmd_ingest, "stats": cmd_stats, "train": cmd_train, "experiment": cmd_experiment,
            "export-embeddings": cmd_export, "gradcheck": cmd_gradcheck}


def _fail(kind: str, exc, code: int) -> int:
    message = " ".join(str(exc).split()) or type(exc).__name__
    print(f"error: {kind}: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    np.seterr(all="ignore")
    try:
        return COMMANDS[args.verb](args)
    except (UsageError, ConfigError) as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except (DataFormatError, FileNotFoundError) as exc:
        return _fail("data", exc, EXIT_DATA)
    except ad.NonFiniteError as exc:
        return _fail("numerical", exc, EXIT_NUMERIC)
    except ValueError as exc:
        return _fail("data", exc, EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
