"""Annotated corpora: M2 parsing, gold-edit application, vocabulary and batching."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import DataError, ParseError

PAD, SOS, EOS, OOV = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")

NONE_REPLACEMENT = "-NONE-"


@dataclass(frozen=True)
class Edit:
    """Replace source tokens ``[start, end)`` by ``replacement``.

    ``start == end`` is an insertion, an empty replacement a deletion.
    """

    start: int
    end: int
    replacement: str
    annotator: int = 0
    kind: str = ""

    @property
    def replacement_tokens(self) -> list[str]:
        return self.replacement.split()

    def key(self) -> tuple[int, int, str]:
        """Identity used for scoring: offsets plus whitespace-normalized replacement."""
        return (self.start, self.end, " ".join(self.replacement.split()))


@dataclass
class AnnotatedSentence:
    tokens: list[str]
    edits: list[Edit] = field(default_factory=list)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def annotators(self) -> list[int]:
        return sorted({e.annotator for e in self.edits})

    def edits_for(self, annotator: int = 0) -> list[Edit]:
        return sorted((e for e in self.edits if e.annotator == annotator), key=lambda e: (e.start, e.end))


# ---------------------------------------------------------------------------
# M2 format
# ---------------------------------------------------------------------------

def _parse_a_line(line: str, line_number: int, n_tokens: int) -> Edit | None:
    fields = line[2:].split("|||")
    if len(fields) < 6:
        raise ParseError(f"A-line has {len(fields)} fields, expected 6", line_number)
    offsets = fields[0].split()
    if len(offsets) != 2:
        raise ParseError(f"bad offsets {fields[0]!r}", line_number)
    try:
        start, end = int(offsets[0]), int(offsets[1])
        annotator = int(fields[5])
    except ValueError:
        raise ParseError(f"non-integer field in {line!r}", line_number) from None
    kind = fields[1]
    if start == -1 and end == -1:
        return None  # "noop": annotator saw nothing to correct
    if not 0 <= start <= end <= n_tokens:
        raise ParseError(f"edit span {start}-{end} outside a {n_tokens}-token sentence", line_number)
    replacement = fields[2].strip()
    if replacement == NONE_REPLACEMENT:
        replacement = ""
    return Edit(start, end, replacement, annotator, kind)


def parse_m2(stream: TextIO | Iterable[str]) -> list[AnnotatedSentence]:
    """Read S/A blocks separated by blank lines."""
    sentences: list[AnnotatedSentence] = []
    current: AnnotatedSentence | None = None
    for number, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            if current is not None:
                sentences.append(current)
                current = None
            continue
        if line.startswith("S ") or line == "S":
            if current is not None:
                sentences.append(current)
            current = AnnotatedSentence(line[2:].split())
        elif line.startswith("A "):
            if current is None:
                raise ParseError("A-line before any S-line", number)
            edit = _parse_a_line(line, number, len(current.tokens))
            if edit is not None:
                current.edits.append(edit)
        else:
            raise ParseError(f"unrecognized line {line[:40]!r}", number)
    if current is not None:
        sentences.append(current)
    return sentences


def format_m2(sentences: Sequence[AnnotatedSentence]) -> str:
    blocks = []
    for s in sentences:
        lines = ["S " + " ".join(s.tokens)]
        for e in s.edits:
            repl = e.replacement if e.replacement else NONE_REPLACEMENT
            lines.append(f"A {e.start} {e.end}|||{e.kind}|||{repl}|||REQUIRED|||-NONE-|||{e.annotator}")
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks) + ("\n" if blocks else "")


def read_m2(path) -> list[AnnotatedSentence]:
    with open(path, encoding="utf-8") as f:
        return parse_m2(f)


def read_parallel(source_path, target_path) -> list[tuple[str, str]]:
    with open(source_path, encoding="utf-8") as f:
        sources = f.read().splitlines()
    with open(target_path, encoding="utf-8") as f:
        targets = f.read().splitlines()
    if len(sources) != len(targets):
        raise DataError(f"{len(sources)} source lines but {len(targets)} target lines")
    return list(zip(sources, targets))


# ---------------------------------------------------------------------------
# Gold edits
# ---------------------------------------------------------------------------

def apply_edits(tokens: Sequence[str], edits: Sequence[Edit]) -> list[str]:
    ordered = sorted(edits, key=lambda e: (e.start, e.end))
    for prev, nxt in zip(ordered, ordered[1:]):
        if nxt.start < prev.end or (nxt.start == prev.start and nxt.end == prev.end == prev.start):
            raise DataError(f"overlapping edits {prev.key()} and {nxt.key()}")
    out = list(tokens)
    for e in reversed(ordered):
        out[e.start : e.end] = e.replacement_tokens
    return out


def apply_gold_edits(sentence: AnnotatedSentence, annotator: int = 0) -> list[str]:
    """Corrected tokens under one annotator's edits, applied right to left."""
    return apply_edits(sentence.tokens, sentence.edits_for(annotator))


def training_pairs(sentences: Iterable[AnnotatedSentence], annotator: int = 0) -> list[tuple[str, str]]:
    return [(s.text, " ".join(apply_gold_edits(s, annotator))) for s in sentences]


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------

class Vocabulary:
    """Character ids with PAD=0, SOS=1, EOS=2, OOV=3 reserved."""

    def __init__(self, chars: Iterable[str]):
        self.chars: list[str] = sorted(set(chars))
        self.char_to_id = {c: i + len(RESERVED) for i, c in enumerate(self.chars)}

    def __len__(self) -> int:
        return len(RESERVED) + len(self.chars)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.chars == other.chars

    def __contains__(self, ch: str) -> bool:
        return ch in self.char_to_id

    def id_to_char(self, i: int) -> str:
        if i < len(RESERVED):
            return RESERVED[i]
        return self.chars[i - len(RESERVED)]

    def encode(self, text: str) -> list[int]:
        return [self.char_to_id.get(c, OOV) for c in text]

    def decode(self, ids: Iterable[int]) -> str:
        """Characters for non-reserved ids; PAD/SOS/EOS/OOV are dropped."""
        n = len(RESERVED)
        return "".join(self.chars[i - n] for i in ids if i >= n)


def build_vocab(texts: Iterable[str]) -> Vocabulary:
    chars: set[str] = set()
    for t in texts:
        chars.update(t)
    if not chars:
        raise DataError("cannot build a vocabulary from an empty corpus")
    return Vocabulary(chars)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    """Padded id matrices for one minibatch.

    Source rows are ``chars + [EOS]``, target rows ``[SOS] + chars + [EOS]``,
    both right-padded with PAD.
    """

    source: np.ndarray
    target: np.ndarray
    source_lengths: np.ndarray
    target_lengths: np.ndarray
    source_texts: list[str]
    target_texts: list[str]

    def __len__(self) -> int:
        return self.source.shape[0]


def _pad(rows: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(r) for r in rows], dtype=np.int64)
    out = np.full((len(rows), int(lengths.max())), PAD, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out, lengths


def make_batch(pairs: Sequence[tuple[str, str]], vocab: Vocabulary) -> Batch:
    src, src_len = _pad([vocab.encode(s) + [EOS] for s, _ in pairs])
    tgt, tgt_len = _pad([[SOS] + vocab.encode(t) + [EOS] for _, t in pairs])
    return Batch(src, tgt, src_len, tgt_len, [s for s, _ in pairs], [t for _, t in pairs])


def filter_pairs(pairs: Sequence[tuple[str, str]], max_chars: int = 400) -> list[tuple[str, str]]:
    """Keep pairs whose source has at most ``max_chars`` characters."""
    return [p for p in pairs if len(p[0]) <= max_chars]


def filter_and_batch(
    pairs: Sequence[tuple[str, str]],
    vocab: Vocabulary,
    max_chars: int = 400,
    batch_size: int = 128,
    seed: int = 0,
    shuffle: bool = True,
) -> list[Batch]:
    if not pairs:
        raise DataError("no training pairs")
    kept = filter_pairs(pairs, max_chars)
    if not kept:
        raise DataError(f"every pair is longer than {max_chars} characters")
    order = np.arange(len(kept))
    if shuffle:
        np.random.default_rng(seed).shuffle(order)
    return [
        make_batch([kept[i] for i in order[start : start + batch_size]], vocab)
        for start in range(0, len(kept), batch_size)
    ]
