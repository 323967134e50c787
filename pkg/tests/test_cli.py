"""End-to-end command-line tests: exit codes, the preprocess/train/decode/
tune/eval pipeline, serialization round-trips, trace export, and the prefix
baseline."""

import collections
import json
import subprocess

import numpy as np
import pytest

from attnsum import model
from attnsum.cli import main
from attnsum.corpus import Vocab
from attnsum.decoding import DecodeConfig, beam_search, finalize
from attnsum.tuning import TunedScorer, FeatureWeights

WORDS = ["alpha", "bravo", "carol", "delta", "eagle", "frost"]


def write_raw_pairs(path, n=24, seed=0):
    rng = np.random.default_rng(seed)
    lines = []
    for _ in range(n):
        art = [WORDS[i] for i in rng.integers(0, len(WORDS), size=5)]
        lines.append(" ".join(art[:2]) + "\t" + " ".join(art))
    path.write_text("".join(line + "\n" for line in lines),
                    encoding="utf-8")


def run_pipeline(tmp_path, encoder="bow", epochs=2, seed=1):
    raw = tmp_path / "raw.tsv"
    tok = tmp_path / "pairs.tsv"
    voc = tmp_path / "vocab.tsv"
    out = tmp_path / f"run-{encoder}"
    write_raw_pairs(raw)
    assert main(["preprocess", "--pairs", str(raw), "--out-pairs", str(tok),
                 "--out-vocab", str(voc), "--min-count", "1"]) == 0
    assert main(["train", "--pairs", str(tok), "--vocab", str(voc),
                 "--out-dir", str(out), "--encoder", encoder,
                 "--embed-dim", "4", "--hidden-dim", "5",
                 "--context-size", "2", "--conv-layers", "1",
                 "--window", "1", "--epochs", str(epochs),
                 "--batch-size", "4", "--lr", "0.05",
                 "--seed", str(seed)]) == 0
    return tok, voc, out


def save_toy_model(tmp_path, encoder="attention", seed=0):
    counts = collections.Counter(
        {"alpha": 9, "bravo": 8, "carol": 7, "delta": 6, "eagle": 5})
    vocab = Vocab.from_counts(counts, min_count=1)
    hyper = model.Hyperparams(vocab_size=len(vocab), embed_dim=3,
                              hidden_dim=4, context_size=2, encoder=encoder,
                              conv_layers=1, window=1)
    params = model.init_params(hyper, seed=seed)
    mpath = tmp_path / f"{encoder}.model"
    vpath = tmp_path / "toy-vocab.tsv"
    model.save_model(mpath, params, hyper)
    vocab.save(vpath)
    return mpath, vpath, params, hyper, vocab


def test_usage_and_version_exit_codes(capsys):
    assert main(["--version"]) == 0
    assert "model format" in capsys.readouterr().out
    assert main([]) == 1
    assert main(["decode"]) == 1
    assert main(["no-such-command"]) == 1


def test_console_script_is_installed():
    proc = subprocess.run(["attnsum", "--version"], capture_output=True,
                          text=True)
    assert proc.returncode == 0
    assert "attnsum" in proc.stdout


def test_preprocess_counts_each_reason(tmp_path, capsys):
    raw = tmp_path / "raw.tsv"
    raw.write_text(
        "alpha bravo\talpha bravo carol\n"       # kept
        "\talpha bravo\n"                        # empty headline
        "delta eagle\tfrost carol\n"             # no content overlap
        "-- alpha\talpha bravo\n"                # edit mark
        "alpha ?\talpha bravo carol\n",          # question mark
        encoding="utf-8")
    tok = tmp_path / "tok.tsv"
    voc = tmp_path / "vocab.tsv"
    assert main(["preprocess", "--pairs", str(raw), "--out-pairs", str(tok),
                 "--out-vocab", str(voc), "--min-count", "1"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out == ["kept 1", "empty 1", "filter1 1", "filter2 1",
                   "filter3 1", "vocab 6"]
    assert tok.read_text(encoding="utf-8") == \
        "alpha bravo\talpha bravo carol\n"


def test_preprocess_empty_file(tmp_path, capsys):
    raw = tmp_path / "raw.tsv"
    raw.write_text("", encoding="utf-8")
    tok = tmp_path / "tok.tsv"
    voc = tmp_path / "vocab.tsv"
    assert main(["preprocess", "--pairs", str(raw), "--out-pairs", str(tok),
                 "--out-vocab", str(voc)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert "kept 0" in out and "vocab 3" in out
    assert tok.read_text(encoding="utf-8") == ""


def test_train_writes_checkpoints_history_and_config(tmp_path, capsys):
    _, _, out = run_pipeline(tmp_path, epochs=2)
    printed = capsys.readouterr().out
    assert "epoch 1 " in printed and "epoch 2 " in printed
    assert (out / "epoch-001.model").exists()
    assert (out / "epoch-002.model").exists()
    assert (out / "final.model").exists()
    history = [json.loads(line) for line in
               (out / "history.jsonl").read_text().splitlines()]
    assert [h["epoch"] for h in history] == [1, 2]
    assert all(np.isfinite(h["valid_perplexity"]) for h in history)
    config = (out / "config.txt").read_text()
    assert "encoder=bow" in config and "seed=1" in config


def test_decode_matches_in_memory_search(tmp_path, capsys):
    tok, voc, out = run_pipeline(tmp_path)
    inp = tmp_path / "input.txt"
    inp.write_text("alpha bravo carol delta eagle\nfrost delta bravo\n",
                   encoding="utf-8")
    dec = tmp_path / "decoded.txt"
    assert main(["decode", "--model", str(out / "final.model"),
                 "--vocab", str(voc), "--input", str(inp), "--N", "3",
                 "--beam", "4", "--out", str(dec)]) == 0
    capsys.readouterr()
    params, hyper = model.load_model(out / "final.model")
    vocab = Vocab.load(voc)
    config = DecodeConfig(length=3, beam=4)
    want = []
    for line in inp.read_text().splitlines():
        scorer = model.Scorer(params, hyper, vocab.encode(line.split()))
        want.append(finalize(beam_search(scorer, config)[0], config, vocab))
    assert dec.read_text(encoding="utf-8").splitlines() == want


def test_decode_is_deterministic_and_parallel_safe(tmp_path, capsys):
    _, voc, out = run_pipeline(tmp_path)
    inp = tmp_path / "input.txt"
    inp.write_text("alpha bravo carol\ncarol delta eagle frost\n" * 3,
                   encoding="utf-8")
    outs = []
    for jobs in ("1", "2", "1"):
        dec = tmp_path / f"dec-{len(outs)}.txt"
        assert main(["decode", "--model", str(out / "final.model"),
                     "--vocab", str(voc), "--input", str(inp), "--N", "3",
                     "--beam", "4", "--jobs", jobs,
                     "--out", str(dec)]) == 0
        outs.append(dec.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    capsys.readouterr()


def test_decode_reports_empty_line(tmp_path, capsys):
    mpath, vpath, *_ = save_toy_model(tmp_path)
    inp = tmp_path / "input.txt"
    inp.write_text("alpha bravo\n\ncarol\n", encoding="utf-8")
    assert main(["decode", "--model", str(mpath), "--vocab", str(vpath),
                 "--input", str(inp), "--N", "2"]) == 2
    assert "line 2" in capsys.readouterr().err


def test_decode_rejects_mismatched_vocab(tmp_path, capsys):
    mpath, _, *_ = save_toy_model(tmp_path)
    small = Vocab.from_counts(collections.Counter({"alpha": 5}),
                              min_count=1)
    vpath = tmp_path / "small-vocab.tsv"
    small.save(vpath)
    inp = tmp_path / "input.txt"
    inp.write_text("alpha\n", encoding="utf-8")
    assert main(["decode", "--model", str(mpath), "--vocab", str(vpath),
                 "--input", str(inp), "--N", "2"]) == 2
    assert "expects" in capsys.readouterr().err


def test_missing_model_file_is_a_data_error(tmp_path, capsys):
    _, vpath, *_ = save_toy_model(tmp_path)
    inp = tmp_path / "input.txt"
    inp.write_text("alpha\n", encoding="utf-8")
    assert main(["decode", "--model", str(tmp_path / "nope.model"),
                 "--vocab", str(vpath), "--input", str(inp),
                 "--N", "2"]) == 2
    capsys.readouterr()


def test_divergent_training_exit_code(tmp_path, capsys):
    raw = tmp_path / "raw.tsv"
    tok = tmp_path / "tok.tsv"
    voc = tmp_path / "vocab.tsv"
    write_raw_pairs(raw)
    assert main(["preprocess", "--pairs", str(raw), "--out-pairs", str(tok),
                 "--out-vocab", str(voc), "--min-count", "1"]) == 0
    assert main(["train", "--pairs", str(tok), "--vocab", str(voc),
                 "--out-dir", str(tmp_path / "run"), "--encoder", "bow",
                 "--embed-dim", "4", "--hidden-dim", "5",
                 "--context-size", "2", "--epochs", "2",
                 "--lr", "1e200", "--batch-size", "4"]) == 3
    assert "error" in capsys.readouterr().err


def test_trace_rows_match_attention_replay(tmp_path, capsys):
    mpath, vpath, params, hyper, vocab = save_toy_model(tmp_path)
    inp = tmp_path / "input.txt"
    inp.write_text("alpha bravo carol delta\n", encoding="utf-8")
    tsv = tmp_path / "trace.tsv"
    assert main(["trace", "--model", str(mpath), "--vocab", str(vpath),
                 "--input", str(inp), "--N", "3", "--beam", "2",
                 "--out", str(tsv)]) == 0
    capsys.readouterr()
    lines = tsv.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# sentence 1"
    rows = np.array([[float(v) for v in line.split("\t")]
                     for line in lines[1:]])
    assert rows.shape == (3, 4)
    np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-9)
    x = vocab.encode(["alpha", "bravo", "carol", "delta"])
    config = DecodeConfig(length=3, beam=2)
    best = beam_search(model.Scorer(params, hyper, x), config)[0]
    replay = model.attention_trace(params, hyper, x, list(best.tokens))
    assert np.array_equal(rows, replay)  # %.17g round-trips float64


def test_trace_single_word_input_is_all_ones(tmp_path, capsys):
    mpath, vpath, *_ = save_toy_model(tmp_path)
    inp = tmp_path / "input.txt"
    inp.write_text("alpha\n", encoding="utf-8")
    tsv = tmp_path / "trace.tsv"
    assert main(["trace", "--model", str(mpath), "--vocab", str(vpath),
                 "--input", str(inp), "--N", "2", "--out", str(tsv)]) == 0
    capsys.readouterr()
    rows = [line for line in tsv.read_text().splitlines()
            if not line.startswith("#")]
    assert rows == ["1", "1"]


def test_trace_requires_attention_encoder(tmp_path, capsys):
    mpath, vpath, *_ = save_toy_model(tmp_path, encoder="bow")
    inp = tmp_path / "input.txt"
    inp.write_text("alpha bravo\n", encoding="utf-8")
    tsv = tmp_path / "trace.tsv"
    assert main(["trace", "--model", str(mpath), "--vocab", str(vpath),
                 "--input", str(inp), "--N", "2", "--out", str(tsv)]) == 2
    assert "attention" in capsys.readouterr().err
    assert main(["decode", "--model", str(mpath), "--vocab", str(vpath),
                 "--input", str(inp), "--N", "2",
                 "--trace", str(tsv)]) == 2
    capsys.readouterr()


def test_eval_prints_text_and_json(tmp_path, capsys):
    cand = tmp_path / "cand.txt"
    refs = tmp_path / "refs.txt"
    src = tmp_path / "src.txt"
    cand.write_text("alpha bravo\ncarol delta\n", encoding="utf-8")
    refs.write_text("alpha bravo\ncarol eagle\n", encoding="utf-8")
    src.write_text("alpha bravo carol\ncarol delta eagle\n",
                   encoding="utf-8")
    assert main(["eval", "--cand", str(cand), "--refs", str(refs),
                 "--metrics", "rouge1,rougeL", "--inputs", str(src)]) == 0
    out = capsys.readouterr().out.splitlines()
    report = json.loads(out[-1])
    assert report["rouge1"] == pytest.approx((1.0 + 0.5) / 2)
    assert report["ext_pct"] == 100.0
    assert any(line.startswith("rouge1") for line in out)
    assert main(["eval", "--cand", str(cand), "--refs", str(refs),
                 "--metrics", "bleu"]) == 2
    capsys.readouterr()


def test_baseline_whole_token_prefix(tmp_path, capsys):
    inp = tmp_path / "input.txt"
    inp.write_text("alpha bravo carol\n"
                   "alpha bravo carol\n"
                   f"{'a' * 20} bravo\n", encoding="utf-8")
    out = tmp_path / "base.txt"
    assert main(["baseline", "--input", str(inp), "--byte-cap", "11",
                 "--out", str(out)]) == 0
    capsys.readouterr()
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "alpha bravo"
    assert lines[1] == "alpha bravo"
    assert lines[2] == "a" * 11  # over-long first token: plain byte cut
    assert all(len(line.encode("utf-8")) <= 11 for line in lines)


def test_baseline_tokens_always_come_from_input(tmp_path, capsys):
    inp = tmp_path / "input.txt"
    inp.write_text("the market fell sharply today\nbravo delta eagle\n",
                   encoding="utf-8")
    out = tmp_path / "base.txt"
    assert main(["baseline", "--input", str(inp), "--byte-cap", "75",
                 "--out", str(out)]) == 0
    capsys.readouterr()
    for got, src in zip(out.read_text().splitlines(),
                        inp.read_text().splitlines()):
        assert got == src  # shorter than the cap: unchanged
        assert set(got.split()) <= set(src.split())


def test_describe_prints_header(tmp_path, capsys):
    mpath, *_ = save_toy_model(tmp_path)
    assert main(["describe", "--model", str(mpath)]) == 0
    out = capsys.readouterr().out
    assert "format_version 1" in out
    assert "encoder attention" in out
    assert "vocab_size 8" in out
    assert "E 3x8" in out


def biased_model_files(tmp_path):
    counts = collections.Counter({"a": 10, "b": 9, "c": 8, "d": 7, "e": 6})
    vocab = Vocab.from_counts(counts, min_count=1)
    hyper = model.Hyperparams(vocab_size=len(vocab), embed_dim=2,
                              hidden_dim=2, context_size=2, encoder="none")
    params = model.init_params(hyper, seed=0)
    for name in params.names():
        params[name] = np.zeros_like(params[name])
    params["b_V"] = np.array([-50.0, -50.0, -50.0, 0.4, 0.3, 0.2, -5.0,
                              0.5])
    mpath = tmp_path / "biased.model"
    vpath = tmp_path / "letters.tsv"
    model.save_model(mpath, params, hyper)
    vocab.save(vpath)
    return mpath, vpath


def test_tune_writes_named_weights(tmp_path, capsys):
    mpath, vpath = biased_model_files(tmp_path)
    dev = tmp_path / "dev.txt"
    refs = tmp_path / "refs.txt"
    dev.write_text("a b c\n", encoding="utf-8")
    refs.write_text("a b c\n", encoding="utf-8")
    wpath = tmp_path / "weights.json"
    assert main(["tune", "--model", str(mpath), "--vocab", str(vpath),
                 "--dev", str(dev), "--refs", str(refs), "--N", "3",
                 "--beam", "8", "--out", str(wpath)]) == 0
    out = capsys.readouterr().out
    assert "identity 0.000000 tuned 1.000000" in out
    weights = json.loads(wpath.read_text(encoding="utf-8"))
    assert set(weights) == {"log_prob", "unigram", "bigram", "trigram",
                            "reorder"}
    # the tuned weights drive the decoder through the weights flag
    dec = tmp_path / "dec.txt"
    assert main(["decode", "--model", str(mpath), "--vocab", str(vpath),
                 "--input", str(dev), "--N", "3", "--beam", "8",
                 "--weights", str(wpath), "--out", str(dec)]) == 0
    capsys.readouterr()
    assert dec.read_text(encoding="utf-8") == "a b c\n"


def test_tune_rejects_misaligned_refs(tmp_path, capsys):
    mpath, vpath = biased_model_files(tmp_path)
    dev = tmp_path / "dev.txt"
    refs = tmp_path / "refs.txt"
    dev.write_text("a b c\n", encoding="utf-8")
    refs.write_text("a b c\nd e\n", encoding="utf-8")
    assert main(["tune", "--model", str(mpath), "--vocab", str(vpath),
                 "--dev", str(dev), "--refs", str(refs), "--N", "3",
                 "--out", str(tmp_path / "w.json")]) == 2
    assert "line 2" in capsys.readouterr().err
