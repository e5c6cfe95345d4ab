"""Command-line entry point: ``charnorm {train,correct,evaluate,mle,embed}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or format
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import mle
from .corpus import build_vocab, filter_and_batch, filter_pairs, read_m2, training_pairs
from .embeddings import WordFeatureProvider, load_embeddings, save_embeddings, train_skipgram
from .errors import CheckpointError, ConfigError, DataError, NumericError
from .inference import Corrector
from .m2scorer import score_m2
from .model import ModelConfig, Seq2Seq, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, Trainer

log = logging.getLogger("charnorm")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


@dataclass
class RunConfig:
    d_ce: int = 128
    d: int = 256
    dropout: float = 0.1
    sampling: float = 0.35
    lr: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 10.0
    epochs: int = 30
    batch: int = 128
    max_chars: int = 400
    seed: int = 42
    word_features: str = "none"
    embeddings: str = ""
    beam: int = 5

    def model_config(self, d_voc: int, d_we: int) -> ModelConfig:
        return ModelConfig(d_voc, self.d_ce, self.d, d_we, self.dropout, self.sampling)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.lr, self.beta1, self.beta2, self.eps, self.clip, self.epochs, self.batch, self.seed)

    def embedding_paths(self) -> list[str]:
        return [p.strip() for p in self.embeddings.split(",") if p.strip()]

    def format(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, value: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = type(getattr(RunConfig(), key))
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {kind.__name__}") from None


def read_config_file(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as f:
        for number, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{number}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = _coerce(key, value)
    return values


def resolve_config(args) -> RunConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for name in _FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return RunConfig(**values)


def make_provider(mode: str, paths, whitespace=None, seed: int = 42) -> WordFeatureProvider:
    if mode == "none":
        return WordFeatureProvider("none")
    if not paths:
        raise ConfigError(f"word_features = {mode} needs embeddings = <file>[,<file>]")
    return WordFeatureProvider(mode, [load_embeddings(p) for p in paths], whitespace, seed)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = resolve_config(args)
    print("resolved config:\n" + cfg.format(), end="", file=sys.stderr)
    for p in (args.train, args.dev):
        if p and not Path(p).is_file():
            raise FileNotFoundError(p)
    pairs = filter_pairs(training_pairs(read_m2(args.train)), cfg.max_chars)
    if not pairs:
        raise DataError("no training pairs left after filtering")
    dev_pairs = training_pairs(read_m2(args.dev)) if args.dev else []
    vocab = build_vocab([s for p in pairs for s in p])
    provider = make_provider(cfg.word_features, cfg.embedding_paths(), seed=cfg.seed)
    model = Seq2Seq(cfg.model_config(len(vocab), provider.dim), seed=cfg.seed)
    tcfg = cfg.train_config()
    batches = filter_and_batch(pairs, vocab, cfg.max_chars, cfg.batch, cfg.seed)
    dev_batches = filter_and_batch(dev_pairs, vocab, cfg.max_chars, cfg.batch, shuffle=False) if dev_pairs else []
    trainer = Trainer(model, tcfg, provider)
    train_log = trainer.train(batches, dev_batches) if cfg.epochs > 0 else None

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    features = {"mode": provider.mode, "whitespace": provider.whitespace.tolist()}
    save_checkpoint(model, vocab, out / "model.ckpt", features)
    (out / "loss.log").write_text(train_log.format() if train_log else "", encoding="utf-8")
    (out / "config.txt").write_text(cfg.format(), encoding="utf-8")
    print(f"wrote {out / 'model.ckpt'}")
    return 0


def _load_corrector(args) -> Corrector:
    model, vocab, features = load_checkpoint(args.checkpoint)
    mode = features.get("mode", "none")
    whitespace = np.asarray(features.get("whitespace", []), dtype=np.float64)
    paths = [p for p in (args.embeddings or "").split(",") if p]
    provider = make_provider(mode, paths, whitespace if whitespace.size else None)
    if provider.dim != model.config.d_we:
        raise CheckpointError(f"word features have width {provider.dim}, model expects {model.config.d_we}")
    return Corrector(model, vocab, provider, args.beam, args.length_normalize)


def cmd_correct(args) -> int:
    if args.beam < 1:
        raise ConfigError("--beam must be >= 1")
    corrector = _load_corrector(args)
    lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    with open(args.output, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(corrector.correct(line) + "\n")
    return 0


def cmd_evaluate(args) -> int:
    gold = read_m2(args.gold)
    hyps = Path(args.hypothesis).read_text(encoding="utf-8").splitlines()
    report = score_m2(gold, hyps, window=args.window)
    sys.stdout.write(report.format())
    return 0


def cmd_mle_build(args) -> int:
    table = mle.build_table(read_m2(args.train), args.max_phrase)
    Path(args.output).write_text(table.dumps(), encoding="utf-8")
    return 0


def cmd_mle_apply(args) -> int:
    table = mle.ActionTable.loads(Path(args.table).read_text(encoding="utf-8"), args.max_phrase)
    lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    with open(args.output, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(mle.apply_text(line, table) + "\n")
    return 0


def cmd_embed(args) -> int:
    if args.window < 1:
        raise ConfigError("--window must be >= 1")
    text = Path(args.corpus).read_text(encoding="utf-8")
    sentences = [line.split() for line in text.splitlines() if line.strip()]
    if not sentences:
        raise DataError(f"{args.corpus} is empty")
    emb = train_skipgram(
        sentences,
        window=args.window,
        dim=args.dim,
        subwords=args.subwords,
        negatives=args.negatives,
        epochs=args.epochs,
        seed=args.seed,
        minn=args.minn,
        maxn=args.maxn,
        bucket_count=args.buckets,
    )
    save_embeddings(emb, args.output)
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="charnorm", description="Character-level text normalization with an attentional encoder-decoder.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train the encoder-decoder on an M2 corpus")
    p.add_argument("train", help="training corpus (M2)")
    p.add_argument("out_dir", help="directory for model.ckpt, loss.log and config.txt")
    p.add_argument("--dev", help="development corpus (M2), loss logged per epoch")
    p.add_argument("--config", help="'key = value' config file; flags override it")
    defaults = RunConfig()
    for name, f in _FIELDS.items():
        default = getattr(defaults, name)
        p.add_argument(f"--{name}", type=type(default), default=None, help=f"(default: {default})")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("correct", help="correct a text file line by line")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--embeddings", default="", help="embedding file(s), comma-separated, as used in training")
    p.add_argument("--beam", type=int, default=5, help="beam width (default: 5)")
    p.add_argument("--length-normalize", action="store_true", help="rank beams by mean log-likelihood")
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("evaluate", help="MaxMatch P/R/F1 of a hypothesis file against gold M2")
    p.add_argument("gold")
    p.add_argument("hypothesis")
    p.add_argument("--window", type=int, default=4, help="max source tokens per merged edit (default: 4)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("mle", help="most-frequent-action baseline")
    msub = p.add_subparsers(dest="mle_command", required=True, parser_class=_Parser)
    q = msub.add_parser("build", help="count actions in an M2 corpus")
    q.add_argument("train")
    q.add_argument("output")
    q.add_argument("--max-phrase", type=int, default=mle.MAX_PHRASE)
    q.set_defaults(func=cmd_mle_build)
    q = msub.add_parser("apply", help="apply a table to tokenized text")
    q.add_argument("table")
    q.add_argument("input")
    q.add_argument("output")
    q.add_argument("--max-phrase", type=int, default=mle.MAX_PHRASE)
    q.set_defaults(func=cmd_mle_apply)

    p = sub.add_parser("embed", help="train skip-gram word embeddings on plain text")
    p.add_argument("corpus")
    p.add_argument("output")
    p.add_argument("--window", type=int, default=5, help="2 for narrow, 5 for wide (default: 5)")
    p.add_argument("--subwords", action=argparse.BooleanOptionalAction, default=True, help="hashed n-gram vectors")
    p.add_argument("--dim", type=int, default=300)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--minn", type=int, default=2)
    p.add_argument("--maxn", type=int, default=6)
    p.add_argument("--buckets", type=int, default=2_000_000)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_embed)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"charnorm: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"charnorm: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, UnicodeDecodeError) as exc:
        print(f"charnorm: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
