#!/usr/bin/env python3
"""
Command-line entry point for the document translation pipeline.

    python src/cli.py preprocess --config run.ini
    python src/cli.py train --config run.ini [--resume]
    python src/cli.py translate --config run.ini input.src [--k 3 --beam 4 --position last]
    python src/cli.py evaluate hyp.txt ref.txt [--per-position --k 3]
    python src/cli.py score-contrastive --config run.ini groups.tsv
    python src/cli.py masks tokens.txt --kind enc-local
    python src/cli.py synth --out-dir data/synth
    python src/cli.py status --run-dir runs/default
"""

import argparse
import dataclasses
import logging
import os
import sys

from config import RunLock, load_config, write_echo
from corpus import (
    SEP,
    Vocabulary,
    build_vocab,
    chunk_documents,
    dataset_k,
    encode_document,
    load_dataset,
    read_monolingual_documents,
    read_parallel_corpus,
    save_dataset,
)
from decoding import (
    assemble_position,
    read_grid_dump,
    read_sentences,
    render,
    sliding_translate,
    write_grid_dump,
    write_translation,
)
from errors import ConfigError, LstError
from evaluation import bleu, contrastive_accuracy, per_position_report, read_contrastive_file, write_contrastive_file
from masking import MASK_KINDS, render_mask
from model import TranslationModel
from run_status import check_run_status
from synthetic import AgreementSpec, contrastive_groups, generate_agreement_corpus, write_parallel_corpus
from training import train

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

# argparse dest -> config key
OVERRIDES = {
    "seed": "run.seed",
    "run_dir": "run.run_dir",
    "k": "model.k",
    "variant": "model.variant",
    "combine": "model.combine",
    "train_src": "data.train_src",
    "train_tgt": "data.train_tgt",
    "dev_src": "data.dev_src",
    "dev_tgt": "data.dev_tgt",
    "stride": "data.stride",
    "epochs": "training.epochs",
    "max_steps": "training.max_steps",
    "max_tokens": "training.max_tokens",
    "select_by": "training.select_by",
    "beam": "decoding.beam_size",
    "alpha": "decoding.alpha",
    "position": "decoding.position",
}


def setup_logging(verbose=False, log_file=None):
    level = logging.DEBUG if verbose else logging.INFO
    if log_file:
        logging.basicConfig(level=level, format=LOG_FORMAT, filename=log_file, filemode='a', force=True)
    else:
        logging.basicConfig(level=level if verbose else logging.WARNING, format=LOG_FORMAT, force=True)


def _require_files(*paths):
    for path in paths:
        if not path:
            raise ConfigError("a required input path is not configured")
        if not os.path.exists(path):
            raise ConfigError(f"input file not found: {path}")


def _config_from_args(args):
    overrides = {key: getattr(args, dest) for dest, key in OVERRIDES.items() if hasattr(args, dest)}
    return load_config(getattr(args, "config", None), overrides)


def _run_paths(run_dir):
    return {
        "data": os.path.join(run_dir, "data"),
        "outputs": os.path.join(run_dir, "outputs"),
        "src_vocab": os.path.join(run_dir, "vocab.src.tsv"),
        "tgt_vocab": os.path.join(run_dir, "vocab.tgt.tsv"),
        "best": os.path.join(run_dir, "checkpoints", "best.ckpt"),
    }


def _prepare_run_dir(config, args):
    os.makedirs(config.run_dir, exist_ok=True)
    setup_logging(args.verbose, os.path.join(config.run_dir, "run.log"))
    write_echo(config, os.path.join(config.run_dir, "config.echo"))


def _load_vocabs(run_dir):
    paths = _run_paths(run_dir)
    _require_files(paths["src_vocab"], paths["tgt_vocab"])
    return Vocabulary.load(paths["src_vocab"]), Vocabulary.load(paths["tgt_vocab"])


def _load_model(args, config):
    checkpoint = getattr(args, "checkpoint", None) or _run_paths(config.run_dir)["best"]
    _require_files(checkpoint)
    model, _ = TranslationModel.load(checkpoint)
    return model.eval()


def cmd_preprocess(args):
    config = _config_from_args(args)
    data = config.data
    _require_files(data.train_src, data.train_tgt)
    _prepare_run_dir(config, args)
    paths = _run_paths(config.run_dir)
    with RunLock(config.run_dir):
        train_docs = read_parallel_corpus(data.train_src, data.train_tgt)
        max_size = data.vocab_size or None
        src_vocab = build_vocab((s for d in train_docs for s in d.src), max_size, data.min_freq)
        tgt_vocab = build_vocab((t for d in train_docs for t in d.tgt), max_size, data.min_freq)
        src_vocab.save(paths["src_vocab"])
        tgt_vocab.save(paths["tgt_vocab"])

        k = config.model.k
        stride = data.effective_stride(k)
        os.makedirs(paths["data"], exist_ok=True)
        splits = {"train": train_docs}
        if data.dev_src and data.dev_tgt:
            _require_files(data.dev_src, data.dev_tgt)
            splits["dev"] = read_parallel_corpus(data.dev_src, data.dev_tgt)
        for name, docs in splits.items():
            chunks = []
            for doc in docs:
                chunks.extend(chunk_documents(encode_document(doc, src_vocab, tgt_vocab), k, stride))
            save_dataset(os.path.join(paths["data"], f"{name}.npz"), chunks, k)
            longest = max((c.num_tokens for c in chunks), default=0)
            print(f"{name}: {len(docs)} documents, {sum(len(d) for d in docs)} sentences, "
                  f"{len(chunks)} chunks (k={k}, stride={stride}, longest {longest} tokens)")
        print(f"Vocabulary: {len(src_vocab)} source / {len(tgt_vocab)} target tokens")
    return 0


def cmd_train(args):
    config = _config_from_args(args)
    paths = _run_paths(config.run_dir)
    train_path = os.path.join(paths["data"], "train.npz")
    dev_path = os.path.join(paths["data"], "dev.npz")
    _require_files(train_path)
    # the model is trained for the k its data was chunked with
    stated_k, data_k = config.model.k, dataset_k(train_path)
    if stated_k != data_k:
        config = dataclasses.replace(config, model=dataclasses.replace(config.model, k=data_k))
    _prepare_run_dir(config, args)
    if stated_k != data_k:
        logging.warning(f"[model] k={stated_k} ignored: {train_path} was chunked with k={data_k}")
    src_vocab, tgt_vocab = _load_vocabs(config.run_dir)
    model_config = dataclasses.replace(config.model, vocab_src=len(src_vocab), vocab_tgt=len(tgt_vocab))
    with RunLock(config.run_dir):
        train_chunks = load_dataset(train_path)
        dev_chunks = load_dataset(dev_path) if os.path.exists(dev_path) else []
        model = TranslationModel(model_config, seed=config.seed)
        print(f"Training {model_config.variant} model (k={model_config.k}, "
              f"{model.params.count():,} parameters) on {len(train_chunks)} chunks")
        result = train(model, train_chunks, dev_chunks, config.training, config.run_dir,
                       seed=config.seed, resume=args.resume)
    print(f"Finished after {result.steps} steps; best checkpoint: {result.best_checkpoint}")
    return 0


def cmd_translate(args):
    config = _config_from_args(args)
    _require_files(args.input)
    _prepare_run_dir(config, args)
    paths = _run_paths(config.run_dir)
    model = _load_model(args, config)
    src_vocab, tgt_vocab = _load_vocabs(config.run_dir)
    k = args.k or model.config.k
    decode = config.decoding
    with RunLock(config.run_dir):
        documents = read_monolingual_documents(args.input)
        grids, outputs = [], []
        for doc_id, sentences in enumerate(documents):
            encoded = [src_vocab.encode(s) for s in sentences]
            grid = sliding_translate(model, encoded, k, decode.beam_size, decode.alpha, decode, doc_id)
            grids.append(grid)
            outputs.append(render(assemble_position(grid, decode.resolve_position(grid.k)), tgt_vocab))
            logging.info(f"Translated document {doc_id} ({len(sentences)} sentences, "
                         f"{grid.malformed} malformed windows)")
        os.makedirs(paths["outputs"], exist_ok=True)
        output = args.output or os.path.join(paths["outputs"], "translation.txt")
        grid_path = args.grid_dump or os.path.join(paths["outputs"], "grid.tsv")
        write_translation(output, outputs)
        write_grid_dump(grid_path, grids, tgt_vocab)
    malformed = sum(g.malformed for g in grids)
    print(f"Translated {len(documents)} documents with k={k}, beam={decode.beam_size} -> {output}")
    if malformed:
        print(f"Separator mismatches in {malformed} windows")
    return 0


def cmd_evaluate(args):
    setup_logging(args.verbose)
    _require_files(args.hyp, args.ref)
    if args.per_position:
        grids = read_grid_dump(args.hyp)
        refs = [[" ".join(s) for s in doc] for doc in read_monolingual_documents(args.ref)]
        k = args.k or max(g.k for g in grids)
        report = per_position_report(grids, refs, k, tokenize=args.tokenize)
        print(report.table())
        rows = "\n".join(report.tsv_rows()) + "\n"
        if args.output:
            with open(args.output, "w", encoding="utf-8") as f:
                f.write(rows)
        else:
            print(rows, end="")
        return 0
    report = bleu(read_sentences(args.hyp), read_sentences(args.ref), args.tokenize)
    print(report.format())
    return 0


def cmd_score_contrastive(args):
    config = _config_from_args(args)
    setup_logging(args.verbose)
    _require_files(args.groups)
    model = _load_model(args, config)
    src_vocab, tgt_vocab = _load_vocabs(config.run_dir)
    groups = read_contrastive_file(args.groups)
    report = contrastive_accuracy(model, groups, src_vocab, tgt_vocab, args.scoring)
    for phenomenon, correct, total, accuracy in report.rows():
        print(f"{phenomenon}\t{correct}\t{total}\t{accuracy:.4f}")
    print(f"all\t{sum(report.correct.values())}\t{sum(report.total.values())}\t{report.accuracy():.4f}")
    if report.skipped:
        print(f"Skipped {report.skipped} groups with empty candidates")
    return 0


def cmd_masks(args):
    setup_logging(args.verbose)
    _require_files(args.tokens)
    with open(args.tokens, "r", encoding="utf-8") as f:
        tokens = f.read().split()
    flags = [1 if token == args.sep else 0 for token in tokens]
    print(render_mask(MASK_KINDS[args.kind](flags, 1)))
    return 0


def cmd_synth(args):
    setup_logging(args.verbose)
    os.makedirs(args.out_dir, exist_ok=True)
    spec = AgreementSpec(n_classes=args.classes)
    n_held_out = max(10, args.documents // 10)
    splits = {
        "train": generate_agreement_corpus(args.documents, spec, seed=args.seed),
        "dev": generate_agreement_corpus(n_held_out, spec, seed=args.seed + 1),
        "test": generate_agreement_corpus(n_held_out, spec, seed=args.seed + 2),
    }
    for name, documents in splits.items():
        write_parallel_corpus(documents, os.path.join(args.out_dir, f"{name}.src"),
                              os.path.join(args.out_dir, f"{name}.tgt"))
        print(f"{name}: {len(documents)} documents")
    write_contrastive_file(os.path.join(args.out_dir, "contrastive.tsv"),
                           contrastive_groups(splits["test"], args.k, spec))
    return 0


def cmd_status(args):
    config = _config_from_args(args)
    print("🔍 Checking Training Run Status\n")
    print("=" * 40)
    check_run_status(config.run_dir, config.training.epochs)
    print("=" * 40)
    return 0


def _position(value):
    if value == "last":
        return value
    try:
        if int(value) >= 1:
            return value
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"position must be a positive integer or 'last', got {value!r}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--run-dir", dest="run_dir", help="run directory (overrides [run] run_dir)")
    common.add_argument("--seed", type=int, help="random seed (overrides [run] seed)")
    common.add_argument("--verbose", action="store_true", help="log at DEBUG level")

    parser = argparse.ArgumentParser(prog="lstnmt", description="Long-short term masking document translation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="build vocabularies and chunked datasets")
    p.add_argument("--train-src", dest="train_src", help="training source file")
    p.add_argument("--train-tgt", dest="train_tgt", help="training target file")
    p.add_argument("--dev-src", dest="dev_src", help="development source file")
    p.add_argument("--dev-tgt", dest="dev_tgt", help="development target file")
    p.add_argument("--k", type=int, help="sentences per chunk")
    p.add_argument("--stride", type=int, help="window stride (default k)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common], help="train a model and write checkpoints")
    p.add_argument("--variant", choices=["baseline", "lst"], help="model variant")
    p.add_argument("--combine", choices=["concat", "sum", "global"], help="stream combination")
    p.add_argument("--epochs", type=int, help="number of epochs")
    p.add_argument("--max-steps", dest="max_steps", type=int, help="stop after this many steps")
    p.add_argument("--max-tokens", dest="max_tokens", type=int, help="padded tokens per batch")
    p.add_argument("--select-by", dest="select_by", choices=["loss", "bleu"], help="best checkpoint criterion")
    p.add_argument("--resume", action="store_true", help="continue from checkpoints/last.ckpt")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", parents=[common], help="sliding-window document translation")
    p.add_argument("input", help="source documents, one sentence per line, blank line between documents")
    p.add_argument("--checkpoint", help="checkpoint to load (default: run_dir/checkpoints/best.ckpt)")
    p.add_argument("--k", type=int, help="window size (default: the model's k)")
    p.add_argument("--beam", type=int, help="beam size")
    p.add_argument("--alpha", type=float, help="length normalization exponent")
    p.add_argument("--position", type=_position, help="window position to output: j or 'last'")
    p.add_argument("--output", help="translation output file")
    p.add_argument("--grid-dump", dest="grid_dump", help="tab-separated doc/i/j/text dump")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", parents=[common], help="BLEU of a translation against references")
    p.add_argument("hyp", help="hypothesis file (or grid dump with --per-position)")
    p.add_argument("ref", help="reference file")
    p.add_argument("--per-position", dest="per_position", action="store_true", help="BLEU for each window position")
    p.add_argument("--k", type=int, help="positions to report (default: largest in the dump)")
    p.add_argument("--tokenize", choices=["13a", "none"], default="13a", help="BLEU tokenization")
    p.add_argument("--output", help="write the j<TAB>bleu rows here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("score-contrastive", parents=[common], help="contrastive consistency accuracy")
    p.add_argument("groups", help="contrastive groups file")
    p.add_argument("--checkpoint", help="checkpoint to load (default: run_dir/checkpoints/best.ckpt)")
    p.add_argument("--scoring", choices=["sum", "mean"], default="sum", help="candidate score")
    p.set_defaults(func=cmd_score_contrastive)

    p = sub.add_parser("masks", parents=[common], help="print a masking matrix")
    p.add_argument("tokens", help="file with whitespace-separated tokens")
    p.add_argument("--sep", default=SEP, help="separator token")
    p.add_argument("--kind", choices=["enc-local", "dec-local", "causal"], default="enc-local", help="mask kind")
    p.set_defaults(func=cmd_masks)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic agreement corpus")
    p.add_argument("--out-dir", dest="out_dir", required=True, help="output directory")
    p.add_argument("--documents", type=int, default=5000, help="training documents")
    p.add_argument("--classes", type=int, default=2, help="noun classes")
    p.add_argument("--k", type=int, default=2, help="context size of the contrastive groups")
    p.set_defaults(func=cmd_synth, seed=0)

    p = sub.add_parser("status", parents=[common], help="report checkpoints and metrics of a run")
    p.set_defaults(func=cmd_status)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("\nInterrupted.", file=sys.stderr)
        return 130
    except (LstError, OSError) as e:
        # console gets only the error line below
        logging.info(f"{args.command} failed: {e}")
        message = str(e).replace("\t", " ").replace("\n", " ")
        print(f"error\t{type(e).__name__}\t{message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
