import argparse

import numpy as np
import pytest

from charnorm.cli import build_parser, main, resolve_config
from charnorm.corpus import EOS, format_m2
from charnorm.embeddings import load_embeddings
from charnorm.inference import clamp_repetitions, greedy_decode
from charnorm.model import load_checkpoint
from charnorm.synthetic import make_corpus

SMALL = ["--d", "16", "--d_ce", "8", "--batch", "8"]


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    sents = make_corpus(40, seed=1, lexicon_size=12)
    (root / "train.m2").write_text(format_m2(sents[:30]), encoding="utf-8")
    (root / "dev.m2").write_text(format_m2(sents[30:]), encoding="utf-8")
    (root / "src.txt").write_text("".join(s.text + "\n" for s in sents[30:]), encoding="utf-8")
    (root / "plain.txt").write_text("".join(s.text + "\n" for s in sents), encoding="utf-8")
    return root


@pytest.fixture(scope="module")
def trained(corpus_dir):
    out = corpus_dir / "run"
    assert main(["train", str(corpus_dir / "train.m2"), str(out), "--dev", str(corpus_dir / "dev.m2"), "--epochs", "2", *SMALL]) == 0
    return out


DEFAULTS = ["d_ce = 128", "d = 256", "batch = 128", "lr = 0.0005", "dropout = 0.1", "sampling = 0.35", "clip = 10.0", "epochs = 30", "beam = 5"]


def test_default_config_resolution():
    args = build_parser().parse_args(["train", "t.m2", "out"])
    lines = resolve_config(args).format().splitlines()
    for line in DEFAULTS + ["seed = 42", "word_features = none"]:
        assert line in lines


def test_train_echoes_resolved_config(corpus_dir, tmp_path, capsys):
    assert main(["train", str(corpus_dir / "train.m2"), str(tmp_path), "--epochs", "0"]) == 0
    err = capsys.readouterr().err.splitlines()
    for line in DEFAULTS:
        expected = "epochs = 0" if line.startswith("epochs") else line
        assert expected in err


def test_zero_epochs_writes_initial_model(corpus_dir, tmp_path):
    assert main(["train", str(corpus_dir / "train.m2"), str(tmp_path), "--epochs", "0", *SMALL]) == 0
    assert (tmp_path / "loss.log").read_text() == ""
    model, vocab, feats = load_checkpoint(tmp_path / "model.ckpt")
    assert model.config.d == 16 and feats["mode"] == "none"
    assert "epochs = 0" in (tmp_path / "config.txt").read_text()


def test_loss_log_has_one_line_per_epoch(trained):
    rows = [line.split("\t") for line in (trained / "loss.log").read_text().splitlines()]
    assert [r[0] for r in rows] == ["1", "2"]
    assert all(len(r) == 3 and float(r[2]) > 0 for r in rows)


def test_config_file_and_overrides(corpus_dir, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# small run\nd = 12\nd_ce = 6   # inline comment\nepochs = 0\n", encoding="utf-8")
    assert main(["train", str(corpus_dir / "train.m2"), str(tmp_path / "o"), "--config", str(cfg), "--d_ce", "5"]) == 0
    model, _, _ = load_checkpoint(tmp_path / "o" / "model.ckpt")
    assert (model.config.d, model.config.d_ce) == (12, 5)
    cfg.write_text("hidden = 3\n", encoding="utf-8")
    assert main(["train", str(corpus_dir / "train.m2"), str(tmp_path / "p"), "--config", str(cfg)]) == 1
    assert "unknown config key" in capsys.readouterr().err


def test_missing_file_and_bad_flags(corpus_dir, tmp_path, capsys):
    assert main(["train", str(tmp_path / "nope.m2"), str(tmp_path)]) == 2
    assert main(["evaluate", str(tmp_path / "nope.m2"), str(corpus_dir / "src.txt")]) == 2
    with pytest.raises(SystemExit) as info:
        main(["train", str(corpus_dir / "train.m2"), str(tmp_path), "--bogus"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1


def _subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                yield sub
                yield from _subparsers(sub)


def test_help_lists_every_flag():
    parser = build_parser()
    for p in [parser, *_subparsers(parser)]:
        text = p.format_help()
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text, (p.prog, opt)


def test_correct_empty_file(trained, tmp_path):
    (tmp_path / "in.txt").write_text("", encoding="utf-8")
    assert main(["correct", str(trained / "model.ckpt"), str(tmp_path / "in.txt"), str(tmp_path / "out.txt")]) == 0
    assert (tmp_path / "out.txt").read_bytes() == b""


def test_correct_beam_one_is_greedy(trained, corpus_dir, tmp_path):
    src = corpus_dir / "src.txt"
    assert main(["correct", str(trained / "model.ckpt"), str(src), str(tmp_path / "b1.txt"), "--beam", "1"]) == 0
    model, vocab, _ = load_checkpoint(trained / "model.ckpt")
    expected = []
    for line in src.read_text(encoding="utf-8").splitlines():
        ids = np.array(vocab.encode(line) + [EOS])
        expected.append(clamp_repetitions(vocab.decode(greedy_decode(model, ids))))
    assert (tmp_path / "b1.txt").read_text(encoding="utf-8").splitlines() == expected


def test_correct_is_deterministic(trained, corpus_dir, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}.txt"
        assert main(["correct", str(trained / "model.ckpt"), str(corpus_dir / "src.txt"), str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].count(b"\n") == len((corpus_dir / "src.txt").read_text().splitlines())


def test_correct_rejects_bad_beam_and_checkpoint(trained, corpus_dir, tmp_path):
    assert main(["correct", str(trained / "model.ckpt"), str(corpus_dir / "src.txt"), str(tmp_path / "x"), "--beam", "0"]) == 1
    (tmp_path / "bad.ckpt").write_bytes(b"CHNRMCKP garbage")
    assert main(["correct", str(tmp_path / "bad.ckpt"), str(corpus_dir / "src.txt"), str(tmp_path / "x")]) == 1


GOLD = "S a b c d\nA 1 2|||R|||x|||REQUIRED|||-NONE-|||0\nA 3 4|||R|||y|||REQUIRED|||-NONE-|||0\n\nS e f\n\n"


@pytest.mark.parametrize(
    "hyp, expected",
    [
        ("a x c d\ne f\n", ["Precision: 1.0000", "Recall: 0.5000", "F_1: 0.6667"]),
        ("a x c y\ne f\n", ["Precision: 1.0000", "Recall: 1.0000", "F_1: 1.0000"]),
        ("a b c d\ne f\n", ["Precision: 1.0000", "Recall: 0.0000", "F_1: 0.0000"]),
    ],
)
def test_evaluate_report(tmp_path, capsys, hyp, expected):
    (tmp_path / "g.m2").write_text(GOLD, encoding="utf-8")
    (tmp_path / "h.txt").write_text(hyp, encoding="utf-8")
    assert main(["evaluate", str(tmp_path / "g.m2"), str(tmp_path / "h.txt")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[:3] == expected
    assert [line.split(":")[0] for line in out[3:]] == ["TP", "FP", "FN"]


def test_evaluate_no_gold_edits_and_length_mismatch(tmp_path, capsys):
    (tmp_path / "g.m2").write_text("S e f\n\n", encoding="utf-8")
    (tmp_path / "h.txt").write_text("e f\n", encoding="utf-8")
    assert main(["evaluate", str(tmp_path / "g.m2"), str(tmp_path / "h.txt")]) == 0
    assert capsys.readouterr().out.splitlines()[:3] == ["Precision: 1.0000", "Recall: 1.0000", "F_1: 1.0000"]
    (tmp_path / "h.txt").write_text("e f\nmore\n", encoding="utf-8")
    assert main(["evaluate", str(tmp_path / "g.m2"), str(tmp_path / "h.txt")]) == 2


def test_mle_build_and_apply(corpus_dir, tmp_path):
    table, src = tmp_path / "t.tsv", corpus_dir / "src.txt"
    assert main(["mle", "build", str(corpus_dir / "train.m2"), str(table)]) == 0
    first = table.read_bytes()
    assert main(["mle", "build", str(corpus_dir / "train.m2"), str(table)]) == 0
    assert table.read_bytes() == first
    outs = []
    for k in range(2):
        assert main(["mle", "apply", str(table), str(src), str(tmp_path / f"o{k}")]) == 0
        outs.append((tmp_path / f"o{k}").read_bytes())
    assert outs[0] == outs[1]
    (tmp_path / "empty.tsv").write_text("", encoding="utf-8")
    assert main(["mle", "apply", str(tmp_path / "empty.tsv"), str(src), str(tmp_path / "same")]) == 0
    assert (tmp_path / "same").read_text().splitlines() == [" ".join(l.split()) for l in src.read_text().splitlines()]


@pytest.mark.parametrize("window", [2, 5])
def test_embed_windows(corpus_dir, tmp_path, window):
    out = tmp_path / "e.vec"
    args = ["embed", str(corpus_dir / "plain.txt"), str(out), "--window", str(window), "--dim", "6", "--epochs", "1", "--buckets", "5000"]
    assert main(args) == 0
    emb = load_embeddings(out)
    assert emb.dim == 6 and emb.bucket_count == 5000 and emb.buckets
    again = tmp_path / "again.vec"
    args[2] = str(again)
    assert main(args) == 0
    assert again.read_bytes() == out.read_bytes()


def test_embed_without_subwords_and_bad_window(corpus_dir, tmp_path):
    out = tmp_path / "w.vec"
    assert main(["embed", str(corpus_dir / "plain.txt"), str(out), "--no-subwords", "--dim", "4", "--epochs", "1"]) == 0
    emb = load_embeddings(out)
    assert emb.bucket_count == 0 and not emb.buckets
    assert main(["embed", str(corpus_dir / "plain.txt"), str(out), "--window", "0"]) == 1


def test_word_feature_pipeline(corpus_dir, tmp_path):
    vec = tmp_path / "e.vec"
    assert main(["embed", str(corpus_dir / "plain.txt"), str(vec), "--dim", "5", "--epochs", "1", "--buckets", "5000"]) == 0
    run = tmp_path / "run"
    train = ["train", str(corpus_dir / "train.m2"), str(run), "--epochs", "1", *SMALL, "--word_features", "subword"]
    assert main(train) == 1  # no embedding file given
    assert main([*train, "--embeddings", f"{vec},{vec}"]) == 0
    model, _, feats = load_checkpoint(run / "model.ckpt")
    assert model.config.d_we == 10 and feats["mode"] == "subword" and len(feats["whitespace"]) == 10
    out = tmp_path / "c.txt"
    assert main(["correct", str(run / "model.ckpt"), str(corpus_dir / "src.txt"), str(out), "--embeddings", f"{vec},{vec}"]) == 0
    assert main(["correct", str(run / "model.ckpt"), str(corpus_dir / "src.txt"), str(out), "--embeddings", str(vec)]) == 1
