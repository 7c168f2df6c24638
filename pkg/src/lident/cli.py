"""Command-line interface: train, predict, eval, sweep, stats.

Exit codes: 0 success, 1 usage or data errors, 2 numeric failure
(training divergence). Output artifacts are written atomically, so a failed
run never leaves a partial file. The LIDENT_SEED environment variable is the
fallback when --seed is not given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import clstm, metrics, ngram
from .corpus import build_charset, compute_stats, read_tsv
from .errors import DivergenceError, LidentError
from .ngram import NgramConfig
from .serialization import atomic_write_text, peek_magic

_NGRAM_MAGIC = b"LIDN"
_CLSTM_MAGIC = b"LIDC"


class UsageError(LidentError):
    """Bad flag combination or value, reported as exit code 1."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lident",
        description="Train and evaluate similar-language identifiers on text<TAB>label corpora.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p_train = sub.add_parser("train", help="train an n-gram model or conv+BiLSTM classifier")
    p_train.add_argument("--kind", choices=("ngram", "clstm"), required=True, help="model family to train")
    p_train.add_argument("--train", required=True, metavar="TSV", help="training corpus (text<TAB>label)")
    p_train.add_argument("--out", required=True, metavar="FILE", help="output model file")
    p_train.add_argument("--dev", metavar="TSV", help="development corpus (clstm: best-epoch selection)")
    p_train.add_argument("--n", type=int, help="ngram: model order in characters (default 7)")
    p_train.add_argument("--alpha", type=float, help="ngram: additive smoothing mass (default 0.1)")
    p_train.add_argument("--max-charset", type=int, help="cap on charset size, unknown slot included")
    p_train.add_argument("--config", metavar="FILE", help="clstm: key=value config file")
    p_train.add_argument("--seq-len", type=int, help="clstm: input length in characters")
    p_train.add_argument("--conv-features", type=int, help="clstm: filters per conv stage")
    p_train.add_argument("--kernels", metavar="K,K,K", help="clstm: conv kernel widths")
    p_train.add_argument("--pools", metavar="P,P,P", help="clstm: max-pooling window sizes")
    p_train.add_argument("--lstm-hidden", type=int, help="clstm: hidden units per direction")
    p_train.add_argument("--dense-units", type=int, help="clstm: fully connected layer width")
    p_train.add_argument("--dropout", type=float, help="clstm: dropout rate before the output layer")
    p_train.add_argument("--lr", type=float, help="clstm: Adam learning rate")
    p_train.add_argument("--epochs", type=int, help="clstm: training epochs")
    p_train.add_argument("--batch-size", type=int, help="clstm: mini-batch size")
    p_train.add_argument("--history", metavar="CSV", help="clstm: write per-epoch loss/accuracy CSV")
    p_train.add_argument("--seed", type=int, help="RNG seed (fallback: LIDENT_SEED, then 0)")
    p_train.set_defaults(func=cmd_train)

    p_predict = sub.add_parser("predict", help="label raw text lines with a trained model")
    p_predict.add_argument("--model", required=True, metavar="FILE", help="model file from `lident train`")
    p_predict.add_argument("--input", metavar="FILE", help="raw input, one text per line")
    p_predict.add_argument("--scores", action="store_true", help="also emit per-label log-scores as TSV")
    p_predict.add_argument("--dump", action="store_true", help="print the model as JSON and exit")
    p_predict.add_argument("--out", metavar="FILE", help="write predictions here instead of stdout")
    p_predict.set_defaults(func=cmd_predict)

    p_eval = sub.add_parser("eval", help="score predictions against gold labels")
    p_eval.add_argument("--model", metavar="FILE", help="model file to evaluate")
    p_eval.add_argument("--gold", metavar="TSV", help="gold corpus (text<TAB>label)")
    p_eval.add_argument("--from-matrix", metavar="CSV", help="score a stored confusion matrix directly")
    p_eval.add_argument("--groups", metavar="TSV", help="label<TAB>group_id assignments")
    p_eval.add_argument("--format", choices=("text", "json", "csv"), default="text", help="report format")
    p_eval.add_argument("--out", metavar="FILE", help="write the report here instead of stdout")
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="train one n-gram model per order and report dev accuracy")
    p_sweep.add_argument("--train", required=True, metavar="TSV", help="training corpus")
    p_sweep.add_argument("--dev", required=True, metavar="TSV", help="development corpus")
    p_sweep.add_argument("--n-min", type=int, required=True, help="smallest order to try")
    p_sweep.add_argument("--n-max", type=int, required=True, help="largest order to try")
    p_sweep.add_argument("--alpha", type=float, default=0.1, help="additive smoothing mass")
    p_sweep.add_argument("--max-charset", type=int, help="cap on charset size, unknown slot included")
    p_sweep.add_argument("--out", metavar="CSV", help="write the sweep CSV here instead of stdout")
    p_sweep.set_defaults(func=cmd_sweep)

    p_stats = sub.add_parser("stats", help="per-label instance counts and length averages")
    p_stats.add_argument("--input", required=True, metavar="TSV", help="corpus to summarize")
    p_stats.add_argument("--format", choices=("text", "json"), default="text", help="output format")
    p_stats.set_defaults(func=cmd_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help and 2 for usage problems; remap usage to 1.
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (LidentError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _resolve_seed(args: argparse.Namespace) -> int | None:
    """Seed priority: --seed flag, then LIDENT_SEED, else None (caller defaults)."""
    if getattr(args, "seed", None) is not None:
        return args.seed
    raw = os.environ.get("LIDENT_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"LIDENT_SEED must be an integer, got {raw!r}") from None


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} {path!r} does not exist or is not a file")
    return p


def _require_out_dir(path: str) -> None:
    parent = Path(path).parent
    if str(parent) and not parent.is_dir():
        raise UsageError(f"output directory {str(parent)!r} does not exist")


_CLSTM_FILE_KEYS = {
    "seq_len": int,
    "charset_dim": int,
    "conv_features": int,
    "conv_kernels": "ints",
    "pools": "ints",
    "lstm_hidden": int,
    "dense_units": int,
    "dropout_rate": float,
    "lr": float,
    "beta1": float,
    "beta2": float,
    "eps": float,
    "epochs": int,
    "batch_size": int,
    "seed": int,
}


def _parse_int_tuple(raw: str, what: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part.strip()) for part in raw.split(","))
    except ValueError:
        raise UsageError(f"{what} must be a comma-separated integer list, got {raw!r}") from None
    return values


def _load_clstm_config(path: str | None) -> dict:
    """Parse a flat key=value file (`#` comments, blank lines ignored)."""
    overrides: dict = {}
    if path is None:
        return overrides
    p = _require_file(path, "config file")
    for line_no, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CLSTM_FILE_KEYS:
            raise UsageError(f"{path}:{line_no}: unknown config key {key!r}")
        kind = _CLSTM_FILE_KEYS[key]
        try:
            overrides[key] = _parse_int_tuple(value, key) if kind == "ints" else kind(value)
        except ValueError:
            raise UsageError(f"{path}:{line_no}: bad value {value!r} for {key}") from None
    return overrides


def cmd_train(args: argparse.Namespace) -> int:
    ngram_flags = {"n": args.n, "alpha": args.alpha}
    clstm_flags = {
        "config": args.config,
        "seq_len": args.seq_len,
        "conv_features": args.conv_features,
        "conv_kernels": args.kernels,
        "pools": args.pools,
        "lstm_hidden": args.lstm_hidden,
        "dense_units": args.dense_units,
        "dropout_rate": args.dropout,
        "lr": args.lr,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "history": args.history,
        "dev": args.dev,
    }
    if args.kind == "ngram":
        wrong = [k for k, v in clstm_flags.items() if v is not None]
        if wrong:
            raise UsageError(f"flags not valid with --kind ngram: {', '.join(sorted(wrong))}")
    else:
        wrong = [k for k, v in ngram_flags.items() if v is not None]
        if wrong:
            raise UsageError(f"flags not valid with --kind clstm: {', '.join(sorted(wrong))}")

    train_path = _require_file(args.train, "training corpus")
    _require_out_dir(args.out)
    if args.history:
        _require_out_dir(args.history)
    seed = _resolve_seed(args)
    started = time.monotonic()
    corpus = read_tsv(train_path)

    if args.kind == "ngram":
        n = args.n if args.n is not None else 7
        alpha = args.alpha if args.alpha is not None else 0.1
        charset = build_charset(corpus, args.max_charset)
        model = ngram.train(corpus, NgramConfig(n, alpha), charset)
        model.save(args.out)
        size = f"{model.table_entries()} count entries"
    else:
        options = _load_clstm_config(args.config)
        for key in ("seq_len", "conv_features", "lstm_hidden", "dense_units",
                    "dropout_rate", "lr", "epochs", "batch_size"):
            value = clstm_flags[key]
            if value is not None:
                options[key] = value
        if args.kernels is not None:
            options["conv_kernels"] = _parse_int_tuple(args.kernels, "--kernels")
        if args.pools is not None:
            options["pools"] = _parse_int_tuple(args.pools, "--pools")
        if args.max_charset is not None:
            options["charset_dim"] = args.max_charset
        if seed is not None:
            options["seed"] = seed  # flag/env beat the config file
        config = clstm.ClstmConfig(**options)
        dev = read_tsv(_require_file(args.dev, "dev corpus")) if args.dev else None
        model, history = clstm.train(corpus, dev, config)
        clstm.save_checkpoint(model, args.out)
        if args.history:
            lines = ["epoch,train_loss,dev_accuracy"]
            lines += [f"{h.epoch},{h.train_loss:.6f},{h.dev_accuracy:.6f}" for h in history]
            atomic_write_text(args.history, "\n".join(lines) + "\n")
        size = f"{sum(p.size for p in model.params.values())} parameters"

    elapsed = time.monotonic() - started
    print(
        f"trained {args.kind}: {len(corpus.labels)} labels, {len(corpus)} instances, "
        f"{size}, {elapsed:.2f}s -> {args.out}"
    )
    return 0


def _load_any_model(path: str):
    """Dispatch on the container magic: (kind, model)."""
    magic = peek_magic(_require_file(path, "model file"))
    if magic == _NGRAM_MAGIC:
        return "ngram", ngram.load(path)
    if magic == _CLSTM_MAGIC:
        return "clstm", clstm.load_checkpoint(path)
    raise UsageError(f"{path!r} is not a recognized model file (magic {magic!r})")


def _classify_texts(kind: str, model, texts: list[str]) -> list[ngram.Scores]:
    if kind == "ngram":
        return [model.classify(text) for text in texts]
    return clstm.predict(model, texts)


def cmd_predict(args: argparse.Namespace) -> int:
    kind, model = _load_any_model(args.model)
    if args.dump:
        if kind == "ngram":
            doc = model.to_json_dict()
        else:
            doc = {
                "kind": "clstm",
                "config": {k: list(v) if isinstance(v, tuple) else v
                           for k, v in vars(model.config).items()},
                "charset": list(model.charset.chars),
                "labels": [label.code for label in model.labels],
                "params": {name: arr.tolist() for name, arr in model.params.items()},
            }
        print(json.dumps(doc, indent=2))
        return 0
    if not args.input:
        raise UsageError("predict needs --input (or --dump)")
    raw = _require_file(args.input, "input file").read_text(encoding="utf-8")
    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    texts = [line[:-1] if line.endswith("\r") else line for line in lines]
    scores = _classify_texts(kind, model, texts)
    labels = model.labels
    out_lines = []
    for s in scores:
        if args.scores:
            out_lines.append(
                s.best.code + "\t" + "\t".join(f"{s.per_label[label]:.6f}" for label in labels)
            )
        else:
            out_lines.append(s.best.code)
    document = "\n".join(out_lines) + ("\n" if out_lines else "")
    if args.out:
        _require_out_dir(args.out)
        atomic_write_text(args.out, document)
    else:
        sys.stdout.write(document)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    if bool(args.from_matrix) == bool(args.model):
        raise UsageError("eval needs exactly one of --model or --from-matrix")
    if args.from_matrix:
        cm = metrics.load_matrix_csv(_require_file(args.from_matrix, "matrix file"))
    else:
        if not args.gold:
            raise UsageError("eval --model needs --gold")
        kind, model = _load_any_model(args.model)
        gold_corpus = read_tsv(_require_file(args.gold, "gold corpus"))
        model_labels = set(model.labels)
        for label in gold_corpus.labels:
            if label not in model_labels:
                raise UsageError(f"gold label {label.code!r} is not known to the model")
        texts = [inst.text for inst in gold_corpus]
        predictions = [s.best for s in _classify_texts(kind, model, texts)]
        gold = [inst.label for inst in gold_corpus]
        cm = metrics.confusion(gold, predictions, labels=model.labels)
    if args.groups:
        groups = metrics.load_groups_tsv(_require_file(args.groups, "groups file"))
        cm = cm.with_groups(groups)
    rep = metrics.report(cm)
    document = metrics.render(rep, cm, args.format)
    if args.out:
        _require_out_dir(args.out)
        atomic_write_text(args.out, document)
    else:
        sys.stdout.write(document)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    if args.n_min < 1 or args.n_min > args.n_max:
        raise UsageError(f"invalid order range {args.n_min}..{args.n_max}")
    train_corpus = read_tsv(_require_file(args.train, "training corpus"))
    dev_corpus = read_tsv(_require_file(args.dev, "dev corpus"))
    charset = build_charset(train_corpus, args.max_charset)
    points = ngram.sweep(train_corpus, dev_corpus, args.n_min, args.n_max, args.alpha, charset)
    lines = ["n,accuracy,model_table_entries,peak_memory_estimate"]
    lines += [f"{p.n},{p.accuracy:.6f},{p.table_entries},{p.estimated_bytes}" for p in points]
    document = "\n".join(lines) + "\n"
    if args.out:
        _require_out_dir(args.out)
        atomic_write_text(args.out, document)
    else:
        sys.stdout.write(document)
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    corpus = read_tsv(_require_file(args.input, "corpus"))
    stats = compute_stats(corpus)
    rows = [
        {"label": label.code, "count": s.instance_count,
         "avg_chars": s.avg_chars, "avg_tokens": s.avg_tokens}
        for label, s in stats.per_label.items()
    ]
    rows.append(
        {"label": "TOTAL", "count": stats.totals.instance_count,
         "avg_chars": stats.totals.avg_chars, "avg_tokens": stats.totals.avg_tokens}
    )
    if args.format == "json":
        print(json.dumps(rows, indent=2))
        return 0
    label_w = max(len(str(r["label"])) for r in rows)
    count_w = max(len(str(r["count"])) for r in rows)
    print(f"{'label'.ljust(label_w)}  {'count'.rjust(count_w)}  avg_chars  avg_tokens")
    for r in rows:
        print(
            f"{str(r['label']).ljust(label_w)}  {str(r['count']).rjust(count_w)}  "
            f"{r['avg_chars']:9.2f}  {r['avg_tokens']:10.2f}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
