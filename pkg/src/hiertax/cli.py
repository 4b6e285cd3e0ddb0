"""Command-line entry point: ``hiertax <subcommand> [flags]``.

Exit status is 0 on success, 1 for bad input (flags, files, labels) and 2
when a run fails for any other reason, such as divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import List, Optional, Sequence

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import SyntheticSpec, generate_synthetic, read_corpus, split, write_corpus
from .encoder import load_precomputed
from .errors import CheckpointError, ValidationError
from .model import HierarchicalClassifier, TrainConfig, predict_one
from .taxonomy import (
    Taxonomy,
    build_connection_matrix,
    derive_dag_from_connections,
    load_taxonomy,
    write_connection_matrix,
)
from .trainer import train_coarse, train_fine

logger = logging.getLogger("hiertax")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------- flag groups


def _data_flags(p: argparse.ArgumentParser, corpus_required: bool = True) -> None:
    p.add_argument("--corpus", required=corpus_required, help="JSON-lines corpus file")
    p.add_argument("--taxonomy", required=True, help="taxonomy file")
    p.add_argument("--split-seed", type=int, default=None,
                   help="split the corpus with this seed; training uses the train part, evaluate the test part")
    p.add_argument("--train-fraction", type=float, default=0.9)


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of training settings; explicit flags override it")
    p.add_argument("--embeddings", help="precomputed hidden states instead of the built-in encoder")
    p.add_argument("--out", required=True, help="checkpoint to write")
    g = p.add_argument_group("training settings")
    g.add_argument("--seed", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--patience", type=int)
    g.add_argument("--val-fraction", type=float)
    g.add_argument("--threshold", type=float)
    g.add_argument("--lambda1", type=float, help="weight of the parent/child embedding penalty")
    g.add_argument("--lambda2", type=float, help="weight of the coarse-derived distribution penalty")
    g.add_argument("--blend", type=float, help="weight of coarse-guided word attention in the fine stage")
    g.add_argument("--u", type=int, help="hidden size")
    g.add_argument("--layers", type=int)
    g.add_argument("--heads", type=int)
    g.add_argument("--max-len", type=int)
    g.add_argument("--dropout", type=float)
    g.add_argument("--min-freq", type=int)
    g.add_argument("--fine-encoder-init", choices=("coarse", "random"))
    for name, text in (
        ("head-relu", "clip the fine head score at zero before the bias"),
        ("flat", "fine stage without coarse guidance or penalties"),
        ("shared-encoder", "fine stage reuses the frozen coarse encoder"),
        ("normalize-p-for-kl", "renormalise fine probabilities before the KL penalty"),
    ):
        g.add_argument(f"--{name}", action=argparse.BooleanOptionalAction, default=None, help=text)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hiertax", description="Two-stage taxonomy-aware multi-label text classification.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on standard error")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synthetic", help="write a long-tail synthetic corpus and its taxonomy")
    p.add_argument("--coarse", type=int, default=3)
    p.add_argument("--fine-per-coarse", type=int, default=4)
    p.add_argument("--keywords-per-label", type=int, default=3)
    p.add_argument("--coarse-keywords", type=int, default=2)
    p.add_argument("--noise-vocab", type=int, default=200)
    p.add_argument("--docs", type=int, default=2000)
    p.add_argument("--zipf", type=float, default=1.2)
    p.add_argument("--leak", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.0, help="mean filler tokens per document")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("build-connections", help="coarse/fine co-occurrence matrix from training records")
    _data_flags(p)
    p.add_argument("--out", required=True, help="tab-separated matrix to write")
    p.add_argument("--derive-taxonomy", help="also write a taxonomy whose edges are induced from the matrix")
    p.add_argument("--edge-threshold", type=float, default=0.05)

    p = sub.add_parser("train-coarse", help="train the coarse-label stage")
    _data_flags(p)
    _train_flags(p)

    p = sub.add_parser("train-fine", help="train the fine-label stage on top of a coarse checkpoint")
    _data_flags(p)
    _train_flags(p)
    p.add_argument("--coarse-checkpoint", required=True)

    p = sub.add_parser("evaluate", help="score a checkpoint and write a JSON report")
    _data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--threshold", type=float)
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--per-category", action="store_true", help="list every label in the printed table")

    p = sub.add_parser("predict", help="label free text or every record of a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--coarse-checkpoint", help="take the coarse stage from this checkpoint instead")
    p.add_argument("--taxonomy", help="refuse checkpoints trained on a different taxonomy")
    p.add_argument("--threshold", type=float)
    p.add_argument("--embeddings")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--text")
    src.add_argument("--batch", help="JSON-lines corpus; one prediction line per record, in input order")
    return parser


# ---------------------------------------------------------------- helpers


def _records(args, taxonomy: Taxonomy, part: str):
    records = read_corpus(args.corpus, taxonomy.space)
    if args.split_seed is None:
        return records
    train, test = split(records, args.train_fraction, args.split_seed)
    return train if part == "train" else test


def _config(args) -> TrainConfig:
    values = {}
    if args.config:
        try:
            values.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file is not valid JSON: {exc}") from None
    for f in fields(TrainConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    return TrainConfig.from_dict(values)


def _embeddings(args, u: int):
    return load_precomputed(args.embeddings, u) if getattr(args, "embeddings", None) else None


def _emit(line: str) -> None:
    print(line, flush=True)


def _load_model(path, taxonomy: Optional[Taxonomy] = None) -> HierarchicalClassifier:
    return HierarchicalClassifier.from_checkpoint(load_checkpoint(path), taxonomy)


# ---------------------------------------------------------------- commands


def cmd_gen_synthetic(args) -> None:
    spec = SyntheticSpec(
        n_coarse=args.coarse,
        fine_per_coarse=args.fine_per_coarse,
        keywords_per_label=args.keywords_per_label,
        coarse_keywords=args.coarse_keywords,
        noise_vocab=args.noise_vocab,
        docs=args.docs,
        zipf=args.zipf,
        leak=args.leak,
        noise=args.noise,
        seed=args.seed,
    )
    corpus = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(out / "corpus.jsonl", corpus.records)
    corpus.taxonomy.save(out / "taxonomy.txt")
    logger.info("wrote %d records to %s", len(corpus.records), out)


def cmd_build_connections(args) -> None:
    taxonomy = load_taxonomy(args.taxonomy)
    w = build_connection_matrix(_records(args, taxonomy, "train"), taxonomy.space)
    write_connection_matrix(args.out, w, taxonomy.space)
    if args.derive_taxonomy:
        dag, warnings = derive_dag_from_connections(w, args.edge_threshold)
        for message in warnings:
            logger.warning(message)
        Taxonomy(taxonomy.space, dag).save(args.derive_taxonomy)


def cmd_train_coarse(args) -> None:
    taxonomy = load_taxonomy(args.taxonomy)
    config = _config(args)
    ckpt = train_coarse(_records(args, taxonomy, "train"), taxonomy, config, _embeddings(args, config.u), log=_emit)
    save_checkpoint(ckpt, args.out)


def cmd_train_fine(args) -> None:
    taxonomy = load_taxonomy(args.taxonomy)
    coarse = load_checkpoint(args.coarse_checkpoint)
    config = _config(args)
    ckpt = train_fine(
        _records(args, taxonomy, "train"), taxonomy, coarse, config, _embeddings(args, config.u), log=_emit
    )
    save_checkpoint(ckpt, args.out)


def cmd_evaluate(args) -> None:
    taxonomy = load_taxonomy(args.taxonomy)
    model = _load_model(args.checkpoint, taxonomy)
    model.embeddings = _embeddings(args, model.config.u)
    report = model.evaluate(_records(args, taxonomy, "test"), args.threshold)
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.table(per_category=args.per_category))


def cmd_predict(args) -> None:
    taxonomy = load_taxonomy(args.taxonomy) if args.taxonomy else None
    model = _load_model(args.checkpoint, taxonomy)
    coarse_model = _load_model(args.coarse_checkpoint, taxonomy) if args.coarse_checkpoint else None
    if args.text is not None:
        coarse, fine = predict_one(args.text, model, args.threshold, coarse_model)
        print(json.dumps({"coarse": coarse, "fine": fine}, sort_keys=True))
        return
    if coarse_model is not None:
        raise ValidationError("--coarse-checkpoint is only supported with --text")
    model.embeddings = _embeddings(args, model.config.u)
    for rec in read_corpus(args.batch, model.space):
        coarse, fine = model.predict(rec, args.threshold)
        print(json.dumps({"id": rec.id, "coarse": coarse, "fine": fine}, sort_keys=True))


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "build-connections": cmd_build_connections,
    "train-coarse": cmd_train_coarse,
    "train-fine": cmd_train_fine,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s",
                        stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except (ValidationError, CheckpointError, OSError) as exc:
        print(f"hiertax {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        logger.debug("unhandled error", exc_info=True)
        print(f"hiertax {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv: Optional[List[str]] = None) -> None:
    sys.exit(run(argv))
