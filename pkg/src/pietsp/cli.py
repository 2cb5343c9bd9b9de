"""Command-line entry point: train / eval / predict / bench / gen-synthetic / convert.

Every run that produces artifacts writes an ``effective-config.json``
capturing all resolved settings; passing it back via ``--config`` reproduces
the run (explicit flags still win).  Set PIETSP_THREADS to pin the BLAS
thread count (must be set before numpy is first imported).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


def _set_thread_env() -> None:
    threads = os.environ.get("PIETSP_THREADS")
    if threads:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _resolve(args, config: dict, key: str, default):
    value = getattr(args, key.replace("-", "_"), None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _load_config_arg(args) -> dict:
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            return json.load(fh)
    return {}


def _write_effective(out_dir: Path, settings: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "effective-config.json").write_text(
        json.dumps(settings, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _split_corpus(corpus, ratios, seed):
    from . import seeding
    from .data import split_users

    return split_users(corpus, tuple(ratios), seeding.spawn_seed(seed, "split"))


def _pick_split(corpus, name: str, ratios, seed):
    if name == "all":
        return corpus
    train, val, test = _split_corpus(corpus, ratios, seed)
    try:
        return {"train": train, "val": val, "test": test}[name]
    except KeyError:
        raise ValueError(f"unknown split '{name}' (train/val/test/all)")


def _cmd_train(args) -> int:
    from .data import load_corpus, prepare_all
    from .train import TrainConfig, evaluate, fit, write_history

    cfg_file = _load_config_arg(args)
    settings = {
        "command": "train",
        "data": _resolve(args, cfg_file, "data", None),
        "seed": _resolve(args, cfg_file, "seed", 0),
        "epochs": _resolve(args, cfg_file, "epochs", 100),
        "batch_size": _resolve(args, cfg_file, "batch_size", 64),
        "dim": _resolve(args, cfg_file, "dim", 32),
        "lr": _resolve(args, cfg_file, "lr", 0.001),
        "weight_decay": _resolve(args, cfg_file, "weight_decay", 0.01),
        "l2": _resolve(args, cfg_file, "l2", 0.0),
        "patience": _resolve(args, cfg_file, "patience", 10),
        "k": _resolve(args, cfg_file, "k", [10, 20, 30, 40]),
        "variant": _resolve(args, cfg_file, "variant", "full"),
        "split_ratios": _resolve(args, cfg_file, "split_ratios", [0.7, 0.1, 0.2]),
    }
    if not settings["data"]:
        print("train: --data is required", file=sys.stderr)
        return 2
    out_dir = Path(args.out)
    config = TrainConfig(
        batch_size=settings["batch_size"],
        dim=settings["dim"],
        base_lr=settings["lr"],
        weight_decay=settings["weight_decay"],
        l2_coeff=settings["l2"],
        max_epochs=settings["epochs"],
        patience=settings["patience"],
        seed=settings["seed"],
        k_list=tuple(settings["k"]),
        variant=settings["variant"],
        split_ratios=tuple(settings["split_ratios"]),
    )
    corpus, report = load_corpus(settings["data"])
    if report.users_dropped or report.empty_sets_dropped or report.duplicate_ids_removed:
        print(
            f"load: kept {report.users_kept} users"
            f" (dropped {report.users_dropped} users, {report.empty_sets_dropped} empty sets,"
            f" {report.duplicate_ids_removed} duplicate ids)"
        )
    train_c, val_c, _ = _split_corpus(corpus, config.split_ratios, config.seed)
    _write_effective(out_dir, settings)
    result = fit(
        train_c,
        val_c,
        config,
        resume_from=(out_dir / "checkpoint-latest.json") if args.resume else None,
        latest_path=out_dir / "checkpoint-latest.json",
        best_path=out_dir / "checkpoint-best.json",
    )
    write_history(result.history, out_dir / "history.jsonl")
    val_report = evaluate(prepare_all(val_c, result.k_max), result.params, config.k_list, config.variant)
    print(
        f"trained {result.epochs_run} epochs; best validation ndcg@{config.early_stop_k}"
        f" {result.best_metric:.4f} at epoch {result.best_epoch + 1}"
    )
    print(val_report.format_table())
    return 0


def _cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import load_corpus, prepare_all
    from .train import TrainConfig, evaluate

    ck = load_checkpoint(args.ckpt)
    config = TrainConfig.from_dict(ck.config or {})
    corpus, _ = load_corpus(args.data)
    part = _pick_split(corpus, args.split, config.split_ratios, config.seed)
    k_list = tuple(args.k) if args.k else config.k_list
    samples = prepare_all(part, ck.params.k_max)
    report = evaluate(samples, ck.params, k_list, config.variant)
    print(report.format_table())
    if args.out:
        out_dir = Path(args.out)
        _write_effective(out_dir, {"command": "eval", "ckpt": args.ckpt, "data": args.data, "split": args.split, "k": list(k_list)})
        (out_dir / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    return 0


def _cmd_predict(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import load_corpus, prepare_all
    from .metrics import top_k
    from .model import forward
    from .train import TrainConfig

    ck = load_checkpoint(args.ckpt)
    config = TrainConfig.from_dict(ck.config or {})
    corpus, _ = load_corpus(args.data)
    part = _pick_split(corpus, args.split, config.split_ratios, config.seed)
    k = args.top if args.top else 10
    lines = []
    for sample in prepare_all(part, ck.params.k_max):
        scores = forward(sample, ck.params, config.variant).logits
        ids = top_k(scores, k)
        lines.append(json.dumps({"user_id": sample.user_id, "items": [int(i) for i in ids]}))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _parse_grid(text: str) -> dict[str, list[int]]:
    grid: dict[str, list[int]] = {}
    for clause in text.replace(";", " ").split():
        if "=" not in clause:
            raise ValueError(f"bad grid clause '{clause}' (expected KEY=v1,v2,...)")
        key, values = clause.split("=", 1)
        key = key.upper()
        if key not in ("N", "K", "E", "D"):
            raise ValueError(f"unknown grid key '{key}' (N, K, E, D)")
        grid[key] = _int_list(values)
    return grid


def _cmd_bench(args) -> int:
    import numpy as np

    from .bench import bench_inference, format_table, synthetic_samples
    from .model import init_params

    cfg_file = _load_config_arg(args)
    grid_text = _resolve(args, cfg_file, "grid", "N=256")
    runs = _resolve(args, cfg_file, "runs", 100)
    batch = _resolve(args, cfg_file, "batch", 64)
    seed = _resolve(args, cfg_file, "seed", 0)
    dtype = np.float32 if _resolve(args, cfg_file, "dtype", "float64") == "float32" else np.float64

    reports, labels = [], []
    throughputs = []
    if args.data and args.ckpt:
        # time inference over a real corpus with a trained checkpoint
        from .bench import bench_throughput
        from .checkpoint import load_checkpoint
        from .data import load_corpus, prepare_all

        ck = load_checkpoint(args.ckpt)
        corpus, _ = load_corpus(args.data)
        samples = prepare_all(corpus, ck.params.k_max)
        params = ck.params.astype(dtype)
        reports.append(bench_inference(samples, params, runs=runs, batch_size=batch))
        labels.append(f"{Path(args.data).name} ({len(samples)} users)")
        if args.workers and args.workers > 1:
            rate = bench_throughput(samples, params, workers=args.workers, batch_size=batch)
            throughputs.append(f"throughput with {args.workers} workers: {rate:.2f} samples/sec")
    else:
        grid = _parse_grid(grid_text if isinstance(grid_text, str) else str(grid_text))
        axes = {"N": grid.get("N", [256]), "K": grid.get("K", [8]), "E": grid.get("E", [1024]), "D": grid.get("D", [32])}
        for n in axes["N"]:
            for k in axes["K"]:
                for e in axes["E"]:
                    for d in axes["D"]:
                        vocab = max(e, n)
                        params = init_params(vocab, d, k, seed=seed).astype(dtype)
                        samples = synthetic_samples(n, k, vocab, batch, seed=seed, dtype=dtype)
                        reports.append(bench_inference(samples, params, runs=runs, batch_size=batch))
                        labels.append(f"N={n} K={k} E={vocab} D={d}")
    print(format_table(reports, labels))
    for line in throughputs:
        print(line)
    if args.out:
        out_dir = Path(args.out)
        _write_effective(
            out_dir,
            {"command": "bench", "grid": grid_text, "runs": runs, "batch": batch, "seed": seed,
             "dtype": "float32" if dtype is np.float32 else "float64"},
        )
        (out_dir / "bench.json").write_text(
            json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    return 0


def _cmd_gen_synthetic(args) -> int:
    from .data import SyntheticSpec, gen_synthetic, save_corpus

    spec = SyntheticSpec(
        users=args.users,
        vocab_size=args.vocab,
        pattern=args.pattern,
        seed=args.seed or 0,
        history_len=args.history_len,
        basket_min=args.basket_min,
        basket_max=args.basket_max,
        pool_size=args.pool_size,
        repeat_prob=args.repeat_prob,
    )
    corpus = gen_synthetic(spec)
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus.users)} users over {corpus.vocab_size} items to {args.out}")
    return 0


def _cmd_convert(args) -> int:
    from .data import convert_json_dump, convert_table, corpus_to_dict

    path = Path(args.input)
    fmt = args.format or ("json" if path.suffix.lower() == ".json" else "table")
    if fmt == "json":
        corpus, report, vocab_map = convert_json_dump(path)
    else:
        corpus, report, vocab_map = convert_table(
            path, args.user_col, args.set_col, args.item_col, delimiter=args.delimiter
        )
    Path(args.out).write_text(json.dumps(corpus_to_dict(corpus)), encoding="utf-8")
    vocab_out = args.vocab_out or str(Path(args.out).with_name("vocab.json"))
    Path(vocab_out).write_text(json.dumps(vocab_map), encoding="utf-8")
    print(
        f"converted {report.users_kept} users, vocabulary {corpus.vocab_size}"
        f" (dropped {report.users_dropped} users, {report.empty_sets_dropped} empty sets)"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pietsp", description="Temporal set prediction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write checkpoints")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--k", type=_int_list)
    p.add_argument("--variant", choices=("full", "no-ee", "no-ge"))
    p.add_argument("--split-ratios", type=_float_list)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a corpus split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--k", type=_int_list)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="emit top-k item ids per user as JSON lines")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("bench", help="inference latency/throughput harness")
    p.add_argument("--grid")
    p.add_argument("--data", help="corpus to time (needs --ckpt); otherwise synthetic --grid shapes")
    p.add_argument("--ckpt")
    p.add_argument("--runs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--workers", type=int, help="also report multi-worker throughput (corpus mode)")
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic corpus")
    p.add_argument("--pattern", required=True, choices=("periodic", "repeat-biased"))
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--vocab", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--history-len", type=int, default=4)
    p.add_argument("--basket-min", type=int, default=3)
    p.add_argument("--basket-max", type=int, default=5)
    p.add_argument("--pool-size", type=int, default=10)
    p.add_argument("--repeat-prob", type=float, default=0.8)
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("convert", help="convert a raw dump (CSV/TSV or JSON) to a corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("table", "json"))
    p.add_argument("--user-col", default="user")
    p.add_argument("--set-col", default="order")
    p.add_argument("--item-col", default="item")
    p.add_argument("--delimiter")
    p.add_argument("--vocab-out")
    p.set_defaults(func=_cmd_convert)
    return parser


def main(argv=None) -> int:
    _set_thread_env()
    parser = build_parser()
    args = parser.parse_args(argv)
    from .errors import PietspError

    try:
        return args.func(args)
    except (PietspError, FileNotFoundError, ValueError) as exc:
        print(f"pietsp {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
