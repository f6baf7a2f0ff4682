"""Command-line entry points: train, parse, eval, phrases.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import numeric as nm
from .chart import fill_chart
from .data import DataError, EmbeddingTable, read_corpus
from .evaluation import (
    EvalSettings,
    corpus_depth,
    corpus_f1,
    corpus_label_recall,
    labeled_spans,
    phrase_precision_at_k,
)
from .parser import (
    parse_sentence,
    read_treebank,
    render_tree,
)
from .trainer import Checkpoint, ConfigError, TrainConfig, fit

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

PHRASE_KS = (1, 10, 100)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ioparse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model on a corpus")
    train.add_argument("--corpus", required=True, help="one tokenized sentence per line")
    train.add_argument("--embeddings", help="text embedding file (token v1 .. vD)")
    train.add_argument("--treebank", help="gold trees used as a validation set")
    train.add_argument("--out", required=True, help="checkpoint output path")
    train.add_argument("--config", help="JSON file of training fields; explicit flags win")
    # training flags default to None so a config file can fill the gaps;
    # the built-in defaults live on TrainConfig
    train.add_argument("--dim", type=int, help="cell dimension (default 32)")
    train.add_argument("--embed-dim", type=int, dest="embed_dim",
                       help="input embedding dimension (default: --dim)")
    train.add_argument("--lr", type=float, help="learning rate (default 1e-3)")
    train.add_argument("--batch", type=int, help="batch size (default 16)")
    train.add_argument("--steps", type=int, help="parameter updates (default 2000)")
    train.add_argument("--loss", choices=["margin", "softmax"], help="objective (default margin)")
    train.add_argument("--compose", choices=["mlp", "treelstm"], help="composer (default mlp)")
    train.add_argument("--kernel", action=argparse.BooleanOptionalAction,
                       help="kernelized mlp input (default off)")
    train.add_argument("--share", action=argparse.BooleanOptionalAction,
                       help="tie the top-down composer to the bottom-up one (default on)")
    train.add_argument("--negatives", type=int, help="negative samples per batch (default 100)")
    train.add_argument("--seed", type=int, help="run seed (default 0)")
    train.add_argument("--quiet", action="store_true", help="suppress the step log")

    parse = sub.add_parser("parse", help="parse sentences with a trained model")
    parse.add_argument("--checkpoint", required=True)
    parse.add_argument("--corpus", required=True, help="sentences to parse")
    parse.add_argument("--embeddings", help="override the checkpoint's embedding file")
    parse.add_argument("--pp", action="store_true",
                       help="attach trailing punctuation to the root")
    parse.add_argument("--threads", type=int, default=1, help="chart worker threads")
    parse.add_argument("--show-scores", action="store_true",
                       help="annotate nodes with their decoder scores")
    parse.add_argument("--out", help="write trees here instead of stdout")

    evalp = sub.add_parser("eval", help="score predicted trees against gold trees")
    evalp.add_argument("--pred", required=True, help="predicted trees, one per line")
    evalp.add_argument("--treebank", required=True, help="gold trees, one per line")
    evalp.add_argument("--preset", choices=["wsj", "wsj10", "wsj40"], default="wsj")
    evalp.add_argument("--out", help="also write the report as JSON")

    phrases = sub.add_parser("phrases", help="phrase-similarity precision@k report")
    phrases.add_argument("--checkpoint", required=True)
    phrases.add_argument("--treebank", required=True, help="labeled gold trees")
    phrases.add_argument("--embeddings", help="override the checkpoint's embedding file")
    phrases.add_argument("--threads", type=int, default=1, help="chart worker threads")
    phrases.add_argument("--out", help="also write the report as JSON")
    return parser


FLAG_TO_FIELD = {
    "dim": "dim",
    "embed_dim": "embed_dim",
    "lr": "lr",
    "batch": "batch_size",
    "steps": "steps",
    "loss": "loss",
    "compose": "compose",
    "kernel": "kernel",
    "share": "share",
    "negatives": "negatives",
    "seed": "seed",
}


def _resolve_train_config(args) -> TrainConfig:
    """Precedence: explicit flags > config file > built-in defaults."""
    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(TrainConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        values.update(loaded)
    for flag, field in FLAG_TO_FIELD.items():
        value = getattr(args, flag)
        if value is not None:
            values[field] = value
    return TrainConfig(**values)


def cmd_train(args) -> int:
    config = _resolve_train_config(args)
    config.validate()
    corpus = read_corpus(args.corpus)
    table = None
    if args.embeddings:
        table = EmbeddingTable.from_file(
            args.embeddings, config.resolved_embed_dim(), config.seed
        )
    validation = None
    if args.treebank:
        golds = read_treebank(args.treebank, labeled=True)
        validation = [(t.tokens(), t) for t in golds]
    log_stream = None if args.quiet else sys.stdout
    checkpoint = fit(config, corpus, table, validation, log_stream=log_stream)
    checkpoint.save(args.out)
    return EXIT_OK


def cmd_parse(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    params = checkpoint.build_params()
    table = checkpoint.embedding_table(args.embeddings)
    sentences = read_corpus(args.corpus)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for tokens in sentences:
            tree, weights = parse_sentence(
                tokens, params, table, pp=args.pp, threads=args.threads,
                return_scores=True,
            )
            scores = _split_scores(tree, weights) if args.show_scores else None
            out.write(render_tree(tree, scores) + "\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def _load_gold(path: str, preds):
    """Read the gold file, detecting whether its trees carry labels.

    The labeled reading consumes the first atom of every group as a label,
    so the two readings disagree on token counts; the one agreeing with the
    predictions wins. Labeled is preferred on a tie (treebank convention).
    """
    unlabeled = read_treebank(path, labeled=False)
    try:
        labeled = read_treebank(path, labeled=True)
    except ValueError:
        labeled = None
    counts = [p.size() for p in preds]
    for candidate, flag in ((labeled, True), (unlabeled, False)):
        if candidate is None or len(candidate) != len(counts):
            continue
        if all(t.size() == c for t, c in zip(candidate, counts)):
            return candidate, flag
    if len(unlabeled) != len(counts):
        raise DataError(
            f"sentence count mismatch: {len(counts)} predictions vs "
            f"{len(unlabeled)} gold trees"
        )
    raise DataError("gold trees do not cover the predicted token sequences")


def _split_scores(tree, weights):
    """Decoder weight of each internal node's chosen split, by span."""
    scores = {}
    stack = [tree]
    while stack:
        node = stack.pop()
        if node.is_leaf():
            continue
        stack.extend(node.children)
        start, end = node.span()
        span = (start, end - start)
        if span in weights:
            cut = node.children[0].span()[1] - start
            scores[span] = float(weights[span][cut - 1])
    return scores


def cmd_eval(args) -> int:
    preds = read_treebank(args.pred, labeled=False)
    golds, gold_labeled = _load_gold(args.treebank, preds)
    settings = EvalSettings.preset(args.preset)
    report = corpus_f1(preds, golds, settings)
    recall = corpus_label_recall(preds, golds) if gold_labeled else {}
    lines = [
        ("sentences", report.sentences),
        ("skipped", report.skipped),
        ("precision", f"{report.precision:.4f}"),
        ("recall", f"{report.recall:.4f}"),
        ("f1", f"{report.f1:.4f}"),
        ("depth", f"{report.depth:.4f}"),
    ]
    for key, value in lines:
        sys.stdout.write(f"{key}\t{value}\n")
    label_block = {}
    for label in sorted(recall):
        hit, total = recall[label]
        ratio = hit / total if total else 0.0
        label_block[label] = {"hits": hit, "total": total, "recall": ratio}
        sys.stdout.write(f"label_recall\t{label}\t{ratio:.4f}\t{hit}/{total}\n")
    if args.out:
        payload = dict(report.as_dict)
        payload["label_recall"] = label_block
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def cmd_phrases(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    params = checkpoint.build_params()
    table = checkpoint.embedding_table(args.embeddings)
    golds = read_treebank(args.treebank, labeled=True)
    reps = []
    labels = []
    with nm.no_grad():
        for tree in golds:
            tokens = tree.tokens()
            leaves = np.stack([table.vector(t) for t in tokens])
            chart = fill_chart(leaves, params, threads=args.threads)
            for start, length, label in labeled_spans(tree, min_length=2):
                reps.append(chart.span_representation((start, length)))
                labels.append(label)
    population = len(labels)
    sys.stdout.write(f"spans\t{population}\n")
    results = {}
    for k in PHRASE_KS:
        if k <= population - 1:
            value = phrase_precision_at_k(np.stack(reps), labels, k)
            results[f"P@{k}"] = value
            sys.stdout.write(f"P@{k}\t{value:.4f}\n")
        else:
            sys.stdout.write(f"P@{k}\tn/a\n")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"spans": population, **results}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "parse": cmd_parse,
    "eval": cmd_eval,
    "phrases": cmd_phrases,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        sys.stderr.write(f"ioparse: missing file: {exc.filename}\n")
        return EXIT_DATA
    except nm.NonFiniteError as exc:
        sys.stderr.write(f"ioparse: numeric divergence: {exc}\n")
        return EXIT_NUMERIC
    except (DataError, ConfigError) as exc:
        sys.stderr.write(f"ioparse: {exc}\n")
        return EXIT_DATA
    except ValueError as exc:
        sys.stderr.write(f"ioparse: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
