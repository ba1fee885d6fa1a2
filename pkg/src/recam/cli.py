"""Command-line entry point: ``recam {gen,stats,train,eval,predict,bench}``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .bench import run_bench
from .config import ConfigError, RunConfig
from .data import DataError, build_vocab, dataset_stats, generate_synthetic, load_jsonl, write_jsonl
from .model import IncompatibleCheckpointError, RecamModel
from .training import TrainingDiverged, evaluate, predict_file, train

OUTPUT_ENV = "RECAM_OUTPUT_DIR"


def _output_dir(flag: str | None, cfg: RunConfig | None = None) -> Path:
    if flag:
        return Path(flag)
    if cfg is not None and cfg.values["run"]["output_dir"]:
        return Path(cfg.values["run"]["output_dir"])
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value
    return out


def cmd_gen(args) -> int:
    samples = generate_synthetic(args.count, args.vocab_size, args.passage_len, args.seed)
    write_jsonl(samples, args.out)
    hist = [0] * 5
    for s in samples:
        hist[s.label] += 1
    print(json.dumps({"samples": len(samples), "label_histogram": hist}))
    return 0


def cmd_stats(args) -> int:
    print(json.dumps(dataset_stats(load_jsonl(args.data)), indent=2))
    return 0


def cmd_train(args) -> int:
    overrides = _overrides(args)
    if args.data:
        overrides["data.train_path"] = str(Path(args.data).resolve())
    if args.val:
        overrides["data.val_path"] = str(Path(args.val).resolve())
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    cfg = RunConfig.load(args.config, overrides)
    data = cfg.section("data")
    if not data["train_path"]:
        raise ConfigError("no training data: pass --data or set [data] train_path")
    out_dir = _output_dir(args.out, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_samples = load_jsonl(data["train_path"])
    val_samples = load_jsonl(data["val_path"]) if data["val_path"] else None
    vocab = build_vocab(train_samples, data["min_count"])
    model = RecamModel(cfg.model_config(len(vocab)), seed=cfg.seed)
    cfg.write(out_dir / "resolved.ini")

    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    result = train(model, train_samples, val_samples, cfg.train_config(), vocab=vocab, log=log)
    model.load_arrays(result.best_arrays)
    model.save(out_dir / "best.ckpt", vocab, {"best_step": result.best_step})
    (out_dir / "history.csv").write_text(result.history_csv(), encoding="utf-8")
    print(json.dumps({"best_step": result.best_step, "output_dir": str(out_dir),
                      "best_val_acc": max(r.val_acc for r in result.history)}))
    return 0


def cmd_eval(args) -> int:
    model, vocab, _ = RecamModel.load(args.checkpoint)
    report = evaluate(model, load_jsonl(args.data), vocab)
    text = json.dumps(report.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_predict(args) -> int:
    model, vocab, _ = RecamModel.load(args.checkpoint)
    predict_file(model, load_jsonl(args.data), vocab, args.out)
    return 0


def cmd_bench(args) -> int:
    overrides = _overrides(args)
    for flag, key in (("lengths", "lengths"), ("window", "window"), ("globals", "globals"),
                      ("repetitions", "repetitions")):
        value = getattr(args, flag)
        if value is not None:
            overrides[f"bench.{key}"] = str(value)
    cfg = RunConfig.load(args.config, overrides)
    b = cfg.section("bench")
    try:
        lengths = [int(x) for x in str(b["lengths"]).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"[bench] lengths: expected comma-separated integers, got {b['lengths']!r}") from None
    try:
        report = run_bench(lengths, b["window"], b["globals"], b["repetitions"], b["width"], b["heads"],
                           b["memory_budget_mb"] << 20, b["seed"])
    except ValueError as exc:
        raise ConfigError(f"[bench] {exc}") from None
    out_dir = _output_dir(args.out, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "bench.csv").write_text(report.to_csv(), encoding="utf-8")
    (out_dir / "bench.json").write_text(report.to_json() + "\n", encoding="utf-8")
    cfg.write(out_dir / "resolved.ini")
    print(report.to_csv(), end="")
    print(json.dumps({"exponents": report.exponents, "classification": report.classification()}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recam", description="Long-document multiple-choice reading comprehension")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic labeled JSONL dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-size", type=int, default=200)
    p.add_argument("--passage-len", type=int, default=40)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("stats", help="print dataset counts and token lengths")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--val")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on labeled data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write per-sample predictions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="attention scaling benchmark")
    p.add_argument("--config")
    p.add_argument("--lengths")
    p.add_argument("--window", type=int)
    p.add_argument("--globals", type=int)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--out")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except IncompatibleCheckpointError as exc:
        print(f"incompatible checkpoint: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
