"""Command-line pipeline around the package: preprocess raw pairs, train a
model, decode summaries, tune re-ranking weights, score candidates, emit the
prefix baseline, export attention traces, and inspect model files.

Exit codes: 0 success, 1 command-line usage error, 2 data or file error,
3 numeric failure during training.
"""

import argparse
import dataclasses
import json
import os
import struct
import sys
from concurrent.futures import ThreadPoolExecutor

from . import CORPUS_FORMAT_VERSION, MODEL_FORMAT_VERSION, __version__
from .corpus import (Vocab, detokenize, preprocess, preprocess_pairs,
                     read_pairs, truncate_bytes, write_pairs, encode_pairs)
from .decoding import MODES, DecodeConfig, beam_search, finalize
from .model import (ENCODERS, Hyperparams, Scorer, attention_trace,
                    load_model, read_model_header, save_model)
from .rouge import METRICS, evaluate_corpus, format_report, report_json
from .training import TrainConfig, TrainingDiverged, train
from .tuning import FeatureWeights, TunedScorer, dev_score, mert_tune


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def _write_lines(path, lines):
    text = "".join(line + "\n" for line in lines)
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _load_model_and_vocab(args):
    params, hyper = load_model(args.model)
    vocab = Vocab.load(args.vocab)
    if len(vocab) != hyper.vocab_size:
        raise ValueError(f"{args.vocab}: {len(vocab)} entries but the model "
                         f"expects {hyper.vocab_size}")
    return params, hyper, vocab


def _decode_config(args):
    return DecodeConfig(length=args.N, beam=args.beam, mode=args.mode,
                        byte_cap=args.byte_cap,
                        forbid_unk=not getattr(args, "allow_unk", False))


def _decode_corpus(params, hyper, vocab, lines, config, weights=None,
                   jobs=1):
    """Decode one hypothesis per input line; line order is preserved even
    when decoding in parallel."""

    def one(numbered):
        i, line = numbered
        tokens = preprocess(line)
        if not tokens:
            raise ValueError(f"input line {i + 1} is empty")
        x = vocab.encode(tokens)
        base = Scorer(params, hyper, x)
        scorer = base if weights is None else TunedScorer(base, weights)
        return x, beam_search(scorer, config)[0]

    items = list(enumerate(lines))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, items))
    return [one(item) for item in items]


def _write_trace(path, params, hyper, results):
    """One block per sentence: a '# sentence i' marker, then one tab-joined
    row of attention weights per generated token (columns = input words)."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, (x, hyp) in enumerate(results, 1):
            rows = attention_trace(params, hyper, x, list(hyp.tokens))
            fh.write(f"# sentence {i}\n")
            for row in rows:
                fh.write("\t".join(f"{v:.17g}" for v in row) + "\n")


def cmd_preprocess(args):
    raw = read_pairs(args.pairs)
    kept, counts = preprocess_pairs(raw)
    write_pairs(args.out_pairs, kept)
    seqs = [tokens for pair in kept for tokens in pair]
    vocab = Vocab.build(seqs, min_count=args.min_count)
    vocab.save(args.out_vocab)
    for key in ("kept", "empty", "filter1", "filter2", "filter3"):
        print(f"{key} {counts[key]}")
    print(f"vocab {len(vocab)}")


def _token_pairs(path):
    return [(head.split(), art.split()) for head, art in read_pairs(path)]


def cmd_train(args):
    vocab = Vocab.load(args.vocab)
    pairs = encode_pairs(_token_pairs(args.pairs), vocab)
    if args.valid is not None:
        valid = encode_pairs(_token_pairs(args.valid), vocab)
    else:
        # deterministic tail holdout; tiny corpora validate on themselves
        n_valid = max(1, len(pairs) // 10)
        if len(pairs) > n_valid:
            valid, pairs = pairs[-n_valid:], pairs[:-n_valid]
        else:
            valid = pairs
    hyper = Hyperparams(vocab_size=len(vocab), embed_dim=args.embed_dim,
                        hidden_dim=args.hidden_dim,
                        context_size=args.context_size,
                        encoder=args.encoder, conv_layers=args.conv_layers,
                        window=args.window)
    config = TrainConfig(hyperparams=hyper, max_epochs=args.epochs,
                         learning_rate=args.lr, batch_size=args.batch_size,
                         seed=args.seed, renorm_max_norm=args.max_norm)
    os.makedirs(args.out_dir, exist_ok=True)
    history_path = os.path.join(args.out_dir, "history.jsonl")
    with open(history_path, "w", encoding="utf-8") as history_fh:
        def checkpoint(epoch, params, record):
            save_model(os.path.join(args.out_dir,
                                    f"epoch-{epoch:03d}.model"),
                       params, hyper)
            history_fh.write(json.dumps(dataclasses.asdict(record),
                                        sort_keys=True) + "\n")
            print(f"epoch {epoch} train_nll {record.train_nll:.6f} "
                  f"valid_nll {record.valid_nll:.6f} "
                  f"valid_ppl {record.valid_perplexity:.6f} "
                  f"lr {record.learning_rate:g}")

        params, history = train(config, pairs, valid,
                                epoch_callback=checkpoint)
    final = os.path.join(args.out_dir, "final.model")
    save_model(final, params, hyper)
    with open(os.path.join(args.out_dir, "config.txt"), "w",
              encoding="utf-8") as fh:
        settings = dict(vars(args))
        settings.pop("func")
        settings["vocab_size"] = len(vocab)
        settings["train_pairs"] = len(pairs)
        settings["valid_pairs"] = len(valid)
        for key in sorted(settings):
            fh.write(f"{key}={settings[key]}\n")
    print(f"final {final} valid_ppl {history[-1].valid_perplexity:.6f}")


def cmd_decode(args):
    params, hyper, vocab = _load_model_and_vocab(args)
    config = _decode_config(args)
    if args.trace is not None and hyper.encoder != "attention":
        raise ValueError("--trace requires a model with the attention "
                         f"encoder, not {hyper.encoder!r}")
    weights = (FeatureWeights.load(args.weights)
               if args.weights is not None else None)
    lines = _read_lines(args.input)
    results = _decode_corpus(params, hyper, vocab, lines, config,
                             weights=weights, jobs=args.jobs)
    _write_lines(args.out, [finalize(hyp, config, vocab)
                            for _, hyp in results])
    if args.trace is not None:
        _write_trace(args.trace, params, hyper, results)


def cmd_trace(args):
    args.trace = args.out
    args.out = os.devnull
    args.weights = None
    cmd_decode(args)


def cmd_tune(args):
    params, hyper, vocab = _load_model_and_vocab(args)
    config = _decode_config(args)
    dev_lines = _read_lines(args.dev)
    ref_lines = _read_lines(args.refs)
    if len(dev_lines) != len(ref_lines):
        raise ValueError(
            f"{args.refs}: {len(ref_lines)} lines, expected "
            f"{len(dev_lines)} "
            f"(line {min(len(dev_lines), len(ref_lines)) + 1})")
    dev = []
    for i, (line, ref) in enumerate(zip(dev_lines, ref_lines), 1):
        tokens = preprocess(line)
        ref_tokens = preprocess(ref)
        if not tokens or not ref_tokens:
            raise ValueError(f"line {i} is empty")
        dev.append((vocab.encode(tokens), [ref_tokens]))
    before = dev_score(params, hyper, vocab, dev, FeatureWeights.identity(),
                       config, args.metric)
    weights = mert_tune(params, hyper, vocab, dev, config,
                        metric=args.metric, seed=args.seed)
    after = dev_score(params, hyper, vocab, dev, weights, config,
                      args.metric)
    weights.save(args.out)
    print(f"dev {args.metric} identity {before:.6f} tuned {after:.6f}")


def cmd_eval(args):
    metrics = args.metrics.split(",")
    for metric in metrics:
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}; "
                             f"choose from {METRICS}")
    report = evaluate_corpus(args.cand, args.refs.split(","), metrics,
                             byte_cap=args.byte_cap,
                             inputs_path=args.inputs)
    print(format_report(report))
    print(report_json(report))


def _prefix_line(line, byte_cap):
    """Longest whole-token prefix that fits the cap; a single over-long
    token falls back to a plain byte cut so the cap always holds."""
    tokens = preprocess(line)
    kept = []
    for token in tokens:
        if len(detokenize(kept + [token]).encode("utf-8")) > byte_cap:
            break
        kept.append(token)
    if kept or not tokens:
        return detokenize(kept)
    return truncate_bytes(tokens[0], byte_cap)


def cmd_baseline(args):
    lines = _read_lines(args.input)
    _write_lines(args.out, [_prefix_line(line, args.byte_cap)
                            for line in lines])


def cmd_describe(args):
    header = read_model_header(args.model)
    hyper = header["hyperparams"]
    print(f"format_version {header['format_version']}")
    for field in dataclasses.fields(hyper):
        print(f"{field.name} {getattr(hyper, field.name)}")
    print(f"tensors {len(header['tensors'])}")
    for name in sorted(header["tensors"]):
        dims = "x".join(str(d) for d in header["tensors"][name]) or "scalar"
        print(f"  {name} {dims}")


def _build_parser():
    parser = _Parser(prog="attnsum",
                     description="attention-based sentence summarization")
    parser.add_argument(
        "--version", action="version",
        version=(f"attnsum {__version__} (model format "
                 f"{MODEL_FORMAT_VERSION}, corpus format "
                 f"{CORPUS_FORMAT_VERSION})"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess",
                       help="tokenize, filter, and index raw pairs")
    p.add_argument("--pairs", required=True,
                   help="raw headline<TAB>article lines")
    p.add_argument("--out-pairs", required=True)
    p.add_argument("--out-vocab", required=True)
    p.add_argument("--min-count", type=int, default=5)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a summarization model")
    p.add_argument("--pairs", required=True,
                   help="tokenized headline<TAB>article lines")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--valid", help="held-out pairs "
                   "(default: a 10%% tail split of --pairs)")
    p.add_argument("--encoder", choices=ENCODERS, default="attention")
    p.add_argument("--embed-dim", type=int, default=50)
    p.add_argument("--hidden-dim", type=int, default=100)
    p.add_argument("--context-size", type=int, default=5)
    p.add_argument("--conv-layers", type=int, default=3)
    p.add_argument("--window", type=int, default=2)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--max-norm", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    def add_decode_flags(p, with_cap_default=None):
        p.add_argument("--model", required=True)
        p.add_argument("--vocab", required=True)
        p.add_argument("--input", required=True,
                       help="one sentence per line")
        p.add_argument("--N", type=int, required=True,
                       help="summary length in tokens")
        p.add_argument("--beam", type=int, default=8)
        p.add_argument("--mode", choices=MODES, default="abstractive")
        p.add_argument("--byte-cap", type=int, default=with_cap_default)

    p = sub.add_parser("decode", help="generate summaries")
    add_decode_flags(p)
    p.add_argument("--allow-unk", action="store_true",
                   help="let the unknown-word symbol be generated")
    p.add_argument("--weights", help="tuned feature weights JSON")
    p.add_argument("--trace",
                   help="write per-sentence attention rows as TSV")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="default: stdout")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("trace",
                       help="decode and export attention heatmap rows")
    add_decode_flags(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="trace TSV path")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("tune", help="fit re-ranking feature weights")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--dev", required=True, help="input sentences")
    p.add_argument("--refs", required=True, help="aligned references")
    p.add_argument("--metric", choices=METRICS, default="rouge1")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--beam", type=int, default=8)
    p.add_argument("--mode", choices=MODES, default="abstractive")
    p.add_argument("--byte-cap", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="weights JSON path")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("eval", help="score candidates against references")
    p.add_argument("--cand", required=True)
    p.add_argument("--refs", required=True,
                   help="reference file, or comma-separated files")
    p.add_argument("--metrics", default="rouge1,rouge2,rougeL")
    p.add_argument("--byte-cap", type=int)
    p.add_argument("--inputs",
                   help="paired input sentences; enables ext_pct")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline",
                       help="whole-token prefix of each input")
    p.add_argument("--input", required=True)
    p.add_argument("--byte-cap", type=int, default=75)
    p.add_argument("--out", help="default: stdout")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("describe", help="print a model file's header")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_describe)
    return parser


def main(argv=None):
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OSError, struct.error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
