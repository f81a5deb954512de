"""Command-line interface: train, predict, eval, gradcheck, graph-dump.

Exit codes are a stable scripting contract: 0 success, 1 usage or
configuration error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .checkpoint import load_checkpoint
from .diagnostics import gradient_suite
from .errors import PcqaError
from .evaluation import evaluate
from .knn import knn_graph
from .model import ModelConfig, predict
from .partition import PreprocessConfig, normalize_cloud
from .pcio import load_manifest_file, parse_ply
from .train import TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    partitions: int = 12
    patch_size: int = 512
    k: int = 6
    seed: int = 0
    learning_rate: float = 1e-4
    epochs: int = 100
    threads: int = 1

    def validate(self):
        if not 8 <= self.partitions <= 24:
            raise ConfigError(f"--partitions must be in 8..24, got {self.partitions}")
        if self.patch_size < 7:
            raise ConfigError(f"--patch-size must be >= 7, got {self.patch_size}")
        if self.k < 1:
            raise ConfigError(f"--k must be >= 1, got {self.k}")
        if self.patch_size <= self.k:
            raise ConfigError("--patch-size must exceed --k")
        if self.learning_rate <= 0:
            raise ConfigError(f"--learning-rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"--epochs must be >= 1, got {self.epochs}")
        if self.threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {self.threads}")


_CONFIG_TYPES = {"partitions": int, "patch_size": int, "k": int, "seed": int,
                 "learning_rate": float, "epochs": int, "threads": int}


def _load_config_file(path: str) -> dict:
    """key=value lines; blank lines and # comments ignored."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got '{line}'")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in _CONFIG_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
        try:
            values[key] = _CONFIG_TYPES[key](value.strip())
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value for '{key}'") from None
    return values


def _merge_run_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        for key, value in _load_config_file(args.config).items():
            setattr(cfg, key, value)
    for key in _CONFIG_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            setattr(cfg, key, flag)
    if cfg.threads == 1 and os.environ.get("PCQA_THREADS"):
        try:
            cfg.threads = int(os.environ["PCQA_THREADS"])
        except ValueError:
            raise ConfigError("PCQA_THREADS must be an integer") from None
    cfg.validate()
    return cfg


def _add_run_flags(p: argparse.ArgumentParser, training: bool):
    p.add_argument("--config", help="key=value config file; flags take precedence")
    p.add_argument("--partitions", type=int, help="vertical slices per cloud (8..24)")
    p.add_argument("--patch-size", type=int, dest="patch_size")
    p.add_argument("--k", type=int, help="neighbors per node")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker threads (or PCQA_THREADS)")
    if training:
        p.add_argument("--learning-rate", "--lr", type=float, dest="learning_rate")
        p.add_argument("--epochs", type=int)


def build_parser() -> _Parser:
    parser = _Parser(prog="pcqa", description="Blind point cloud quality assessment")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a manifest")
    p_train.add_argument("--manifest", required=True)
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.add_argument("--no-shuffle", action="store_true")
    _add_run_flags(p_train, training=True)

    p_pred = sub.add_parser("predict", help="score one PLY cloud")
    p_pred.add_argument("--ckpt", required=True)
    p_pred.add_argument("--input", required=True)
    p_pred.add_argument("--json", action="store_true")
    p_pred.add_argument("--seed", type=int, help="override the checkpoint's seed")

    p_eval = sub.add_parser("eval", help="correlation report against a manifest")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--manifest", required=True)
    mode = p_eval.add_mutually_exclusive_group()
    mode.add_argument("--kfold", action="store_true", help="per-reference folds (default)")
    mode.add_argument("--whole-set", action="store_true", help="single whole-set report")
    p_eval.add_argument("--json", action="store_true")
    p_eval.add_argument("--threads", type=int)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p_grad.add_argument("--seed", type=int, default=0)

    p_dump = sub.add_parser("graph-dump", help="print the layer-1 kNN graph")
    p_dump.add_argument("--input", required=True)
    p_dump.add_argument("--k", type=int, default=6)

    return parser


def cmd_train(args) -> int:
    run = _merge_run_config(args)
    manifest = load_manifest_file(args.manifest)
    model_cfg = ModelConfig(k=run.k)
    pre_cfg = PreprocessConfig(num_partitions=run.partitions,
                               patch_size=run.patch_size, seed=run.seed)
    train_cfg = TrainConfig(epochs=run.epochs, seed=run.seed,
                            learning_rate=run.learning_rate,
                            shuffle=not args.no_shuffle)
    result = train(manifest, train_cfg, model_cfg, pre_cfg, out_path=args.out)
    loss_csv = Path(args.out).with_suffix(".loss.csv")
    with open(loss_csv, "w") as f:
        f.write("epoch,mean_loss\n")
        for i, loss in enumerate(result.loss_history):
            f.write(f"{i},{loss!r}\n")
    print(f"trained {run.epochs} epochs; final loss {result.loss_history[-1]:.6g}, "
          f"best {result.best_loss:.6g} at epoch {result.best_epoch}")
    print(f"checkpoint: {args.out}")
    print(f"loss history: {loss_csv}")
    return EXIT_OK


def cmd_predict(args) -> int:
    params, model_cfg, pre_cfg = load_checkpoint(args.ckpt)
    if args.seed is not None:
        pre_cfg = PreprocessConfig(num_partitions=pre_cfg.num_partitions,
                                   patch_size=pre_cfg.patch_size, seed=args.seed)
    pc = parse_ply(Path(args.input).read_bytes(), name=Path(args.input).name)
    score, partition_scores = predict(pc, params, model_cfg, pre_cfg)
    if args.json:
        print(json.dumps({"score": score, "partition_scores": partition_scores}))
    else:
        print(f"score: {score:.8g}")
        print("partition scores: " + " ".join(f"{s:.8g}" for s in partition_scores))
    return EXIT_OK


def cmd_eval(args) -> int:
    params, model_cfg, pre_cfg = load_checkpoint(args.ckpt)
    manifest = load_manifest_file(args.manifest)
    threads = args.threads or int(os.environ.get("PCQA_THREADS", "1") or "1")
    report = evaluate(params, manifest, model_cfg, pre_cfg,
                      kfold=not args.whole_set, threads=max(1, threads))
    print(report.to_json() if args.json else report.to_table())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    reports = gradient_suite(seed=args.seed)
    failed = False
    for r in reports:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<20} max rel error {r.max_rel_error:.3e}  "
              f"({r.checked_tensors} tensors)  {status}")
        failed = failed or not r.passed
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_graph_dump(args) -> int:
    pc = parse_ply(Path(args.input).read_bytes(), name=Path(args.input).name)
    graph = knn_graph(normalize_cloud(pc).positions, args.k)
    sys.stdout.write(graph.dump())
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"train": cmd_train, "predict": cmd_predict, "eval": cmd_eval,
                "gradcheck": cmd_gradcheck, "graph-dump": cmd_graph_dump}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PcqaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
