"""Word-level features for the encoder.

Three modes mirror the ablation axes of the model: ``none`` (characters
only), ``whole_word`` (a vector per known word, nothing for unknown words)
and ``subword`` (fastText-style: average of the word vector and its hashed
character n-gram vectors, n-grams alone for unknown words).

Spaces and words that cannot be represented receive a fixed random
"whitespace" vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, FormatError
from .numerics import uniform_unit_variance

FNV_OFFSET = 2166136261
FNV_PRIME = 16777619

MODES = ("none", "whole_word", "subword")

_SPACE_LIKE = frozenset("\t\n\r\v\f\u00a0\u2007\u2009\u202f\u3000")


def extract_ngrams(word: str, minn: int = 2, maxn: int = 6) -> list[str]:
    """Character n-grams of ``<word>``, ordered by length then position.

    The wrapped word itself is only included when ``maxn`` reaches its full
    length, as in the original fastText tool.
    """
    wrapped = f"<{word}>"
    out = []
    for n in range(minn, maxn + 1):
        for i in range(len(wrapped) - n + 1):
            out.append(wrapped[i : i + n])
    return out


def fnv1a_32(text: str) -> int:
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * FNV_PRIME) & 0xFFFFFFFF
    return h


def hash_ngram(ngram: str, bucket_count: int) -> int:
    return fnv1a_32(ngram) % bucket_count


@dataclass
class SubwordEmbeddings:
    """Word vectors plus a sparse table of trained n-gram buckets.

    Only buckets that received at least one update are stored; a bucket
    missing from ``buckets`` counts as untrained.
    """

    words: list[str]
    vectors: np.ndarray
    buckets: dict[int, np.ndarray] = field(default_factory=dict)
    minn: int = 2
    maxn: int = 6
    bucket_count: int = 0

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.words):
            raise FormatError(f"{len(self.words)} words but vector block of shape {self.vectors.shape}")
        if self.minn > self.maxn:
            raise ConfigError(f"minn={self.minn} exceeds maxn={self.maxn}")
        self.index = {w: i for i, w in enumerate(self.words)}
        self.charset = set("".join(self.words))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def has_subwords(self) -> bool:
        return self.bucket_count > 0 and bool(self.buckets)

    def bucket_ids(self, word: str) -> list[int]:
        if self.bucket_count <= 0:
            return []
        return [hash_ngram(g, self.bucket_count) for g in extract_ngrams(word, self.minn, self.maxn)]

    def word_vector(self, word: str) -> np.ndarray | None:
        i = self.index.get(word)
        return None if i is None else self.vectors[i]

    def compose(self, word: str) -> np.ndarray | None:
        """Subword-composed vector, or None when the word is unhandleable.

        Known word: mean of its own vector and its n-gram bucket vectors.
        Unknown word: mean of its n-gram bucket vectors. A bucket that was
        never trained contributes a zero vector. Unhandleable: a character
        never seen in training, or an unknown word with no n-gram buckets
        (a whole-word-only set).
        """
        if any(c not in self.charset for c in word):
            return None
        ids = self.bucket_ids(word)
        own = self.word_vector(word)
        if own is None and not ids:
            return None
        total = np.zeros(self.dim) if own is None else own.astype(np.float64)
        for b in ids:
            vec = self.buckets.get(b)
            if vec is not None:
                total = total + vec
        return total / (len(ids) + (own is not None))

    def trained_fraction(self, word: str) -> float:
        """Share of the word's n-grams that land in a trained bucket."""
        ids = self.bucket_ids(word)
        return sum(b in self.buckets for b in ids) / len(ids) if ids else 0.0


def compose_word_vector(word: str, emb: SubwordEmbeddings) -> np.ndarray | None:
    return emb.compose(word)


def normalize_spaces(text: str) -> str:
    return "".join(" " if c in _SPACE_LIKE else c for c in text)


def split_words(text: str) -> list[tuple[int, int]]:
    """(start, end) character spans of maximal non-space runs."""
    spans = []
    start = None
    for i, c in enumerate(text):
        if c == " ":
            if start is not None:
                spans.append((start, i))
                start = None
        elif start is None:
            start = i
    if start is not None:
        spans.append((start, len(text)))
    return spans


class WordFeatureProvider:
    """Per-character word features for the encoder input.

    ``sources`` may hold several embedding sets; their vectors are
    concatenated (e.g. narrow and wide windows side by side). A word missing
    from any source falls back to the whitespace vector as a whole.
    """

    def __init__(self, mode: str = "none", sources: Sequence[SubwordEmbeddings] = (), whitespace=None, seed: int = 0):
        if mode not in MODES:
            raise ConfigError(f"unknown word feature mode {mode!r}; choose from {MODES}")
        if mode != "none" and not sources:
            raise ConfigError(f"mode {mode!r} needs at least one embedding set")
        self.mode = mode
        self.sources = list(sources) if mode != "none" else []
        self.dim = sum(s.dim for s in self.sources)
        if whitespace is None:
            whitespace = uniform_unit_variance(np.random.default_rng(seed), self.dim, dtype=np.float64)
        whitespace = np.asarray(whitespace, dtype=np.float64).ravel()
        if whitespace.size != self.dim:
            raise ConfigError(f"whitespace vector has width {whitespace.size}, embeddings give {self.dim}")
        self.whitespace = whitespace
        self._cache: dict[str, np.ndarray | None] = {}

    def _lookup(self, word: str, emb: SubwordEmbeddings) -> np.ndarray | None:
        if self.mode == "whole_word":
            return emb.word_vector(word)
        return emb.compose(word)

    def word_vector(self, word: str) -> np.ndarray | None:
        """Feature vector for a word, or None when the whitespace vector stands in."""
        if word in self._cache:
            return self._cache[word]
        parts = []
        for emb in self.sources:
            v = self._lookup(word, emb)
            if v is None:
                parts = None
                break
            parts.append(v)
        vec = None if parts is None else np.concatenate(parts)
        self._cache[word] = vec
        return vec

    def feature_sequence(self, text: str) -> np.ndarray:
        """``[len(text), dim]`` features: each character gets its word's vector."""
        text = normalize_spaces(text)
        out = np.empty((len(text), self.dim))
        if self.dim == 0:
            return out
        out[:] = self.whitespace
        for start, end in split_words(text):
            vec = self.word_vector(text[start:end])
            if vec is not None:
                out[start:end] = vec
        return out

    def unhandleable_rate(self, words: Iterable[str]) -> float:
        words = list(words)
        if not words:
            return 0.0
        return sum(self.word_vector(w) is None for w in words) / len(words)


# ---------------------------------------------------------------------------
# Skip-gram training
# ---------------------------------------------------------------------------

def context_pairs(tokens: Sequence[str], window: int) -> list[tuple[int, int]]:
    """(center index, context index) pairs within a fixed window."""
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    pairs = []
    for i in range(len(tokens)):
        for j in range(max(0, i - window), min(len(tokens), i + window + 1)):
            if j != i:
                pairs.append((i, j))
    return pairs


def train_skipgram(
    sentences: Sequence[Sequence[str]],
    window: int = 5,
    dim: int = 300,
    subwords: bool = True,
    negatives: int = 5,
    epochs: int = 5,
    seed: int = 0,
    minn: int = 2,
    maxn: int = 6,
    bucket_count: int = 2_000_000,
    lr: float = 0.05,
    min_count: int = 1,
) -> SubwordEmbeddings:
    """Skip-gram with negative sampling; with ``subwords`` the center word is
    the average of its own vector and its n-gram bucket vectors.

    Single-threaded and deterministic for a given seed. The learning rate
    decays linearly from ``lr`` to 0 over all updates.
    """
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    if dim < 1 or negatives < 0 or epochs < 0:
        raise ConfigError("dim must be >= 1, negatives and epochs >= 0")
    counts: dict[str, int] = {}
    for sent in sentences:
        for w in sent:
            counts[w] = counts.get(w, 0) + 1
    words = sorted(w for w, c in counts.items() if c >= min_count)
    if not words:
        raise ConfigError("skip-gram corpus is empty")
    index = {w: i for i, w in enumerate(words)}
    rng = np.random.default_rng(seed)

    if not subwords:
        bucket_count = 0
    # per-word input rows: own row first, then bucket rows (offset by vocab size)
    bucket_rows: dict[int, int] = {}
    word_inputs: list[np.ndarray] = []
    for w in words:
        rows = [index[w]]
        if bucket_count > 0:
            for g in extract_ngrams(w, minn, maxn):
                b = hash_ngram(g, bucket_count)
                if b not in bucket_rows:
                    bucket_rows[b] = len(words) + len(bucket_rows)
                rows.append(bucket_rows[b])
        word_inputs.append(np.array(rows, dtype=np.int64))

    n_in = len(words) + len(bucket_rows)
    w_in = rng.uniform(-1.0 / dim, 1.0 / dim, size=(n_in, dim))
    w_out = np.zeros((len(words), dim))
    touched = np.zeros(n_in, dtype=bool)

    freq = np.array([counts[w] for w in words], dtype=np.float64) ** 0.75
    noise = np.cumsum(freq / freq.sum())
    noise[-1] = 1.0

    ids = [[index[w] for w in sent if w in index] for sent in sentences]
    pairs_per_epoch = sum(len(context_pairs(s, window)) for s in ids)
    total_updates = max(1, pairs_per_epoch * epochs)
    step = 0
    for _ in range(epochs):
        for sent in ids:
            for i, j in context_pairs(sent, window):
                alpha = lr * (1.0 - step / total_updates)
                step += 1
                rows = word_inputs[sent[i]]
                hidden = w_in[rows].mean(axis=0)
                targets = np.empty(negatives + 1, dtype=np.int64)
                targets[0] = sent[j]
                targets[1:] = np.searchsorted(noise, rng.random(negatives), side="right")
                labels = np.zeros(negatives + 1)
                labels[0] = 1.0
                out_vecs = w_out[targets]
                scores = 1.0 / (1.0 + np.exp(-(out_vecs @ hidden)))
                coeff = alpha * (labels - scores)
                grad_hidden = coeff @ out_vecs
                np.add.at(w_out, targets, coeff[:, None] * hidden[None, :])
                # every input row of the center word gets the full hidden gradient, as fastText does
                np.add.at(w_in, rows, grad_hidden[None, :])
                touched[rows] = True

    buckets = {b: w_in[r].copy() for b, r in sorted(bucket_rows.items()) if touched[r]}
    return SubwordEmbeddings(
        words=words,
        vectors=w_in[: len(words)].copy(),
        buckets=buckets,
        minn=minn,
        maxn=maxn,
        bucket_count=bucket_count,
    )


def nearest_neighbors(emb: SubwordEmbeddings, word: str, k: int = 1) -> list[str]:
    v = emb.word_vector(word)
    m = emb.vectors / np.maximum(np.linalg.norm(emb.vectors, axis=1, keepdims=True), 1e-12)
    sims = m @ (v / max(np.linalg.norm(v), 1e-12))
    sims[emb.index[word]] = -math.inf
    return [emb.words[i] for i in np.argsort(-sims, kind="stable")[:k]]


# ---------------------------------------------------------------------------
# Text file format
# ---------------------------------------------------------------------------

def _fmt(vec: np.ndarray) -> str:
    return " ".join(repr(float(x)) for x in vec)


def save_embeddings(emb: SubwordEmbeddings, path) -> None:
    """Header ``words dim minn maxn buckets``, word rows, then ``#<bucket>`` rows."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{len(emb.words)} {emb.dim} {emb.minn} {emb.maxn} {emb.bucket_count}\n")
        for w, v in zip(emb.words, emb.vectors):
            f.write(f"{w} {_fmt(v)}\n")
        for b in sorted(emb.buckets):
            f.write(f"#{b} {_fmt(emb.buckets[b])}\n")


def load_embeddings(path) -> SubwordEmbeddings:
    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 5:
            raise FormatError(f"{path}: header needs 5 integers, got {header!r}")
        try:
            n_words, dim, minn, maxn, bucket_count = map(int, header)
        except ValueError:
            raise FormatError(f"{path}: non-integer header {header!r}") from None
        words, rows, buckets = [], [], {}
        for number, line in enumerate(f, start=2):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            if len(parts) != dim + 1:
                raise FormatError(f"{path}:{number}: expected {dim} values, got {len(parts) - 1}")
            try:
                vec = np.array([float(x) for x in parts[1:]])
            except ValueError:
                raise FormatError(f"{path}:{number}: non-numeric vector entry") from None
            if len(words) < n_words:
                words.append(parts[0])
                rows.append(vec)
            else:
                if not parts[0].startswith("#"):
                    raise FormatError(f"{path}:{number}: expected a #bucket row after {n_words} words")
                buckets[int(parts[0][1:])] = vec
        if len(words) != n_words:
            raise FormatError(f"{path}: header promises {n_words} words, found {len(words)}")
    vectors = np.array(rows).reshape(n_words, dim)
    return SubwordEmbeddings(words, vectors, buckets, minn, maxn, bucket_count)
