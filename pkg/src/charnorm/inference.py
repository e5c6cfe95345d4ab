"""Beam-search decoding and output post-processing."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .corpus import EOS, SOS, Vocabulary
from .embeddings import normalize_spaces
from .errors import ConfigError, EmptySourceError
from .model import EncoderOutput, Seq2Seq, source_features


@dataclass
class Beam:
    tokens: list[int]
    score: float
    finished: bool = False
    states: list = field(default_factory=list, repr=False)


def _log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    x = logits.astype(np.float64)
    x = x - x.max(axis=-1, keepdims=True)
    return x - np.log(np.exp(x).sum(axis=-1, keepdims=True))


def default_max_len(source_len: int) -> int:
    return int(1.5 * source_len) + 10


def beam_search(
    model: Seq2Seq,
    src_ids,
    width: int = 5,
    max_len: int | None = None,
    features=None,
    length_normalize: bool = False,
) -> Beam:
    """Best beam for one source (ids already ending in EOS).

    Finished beams stay in the pool at their frozen score and compete with
    fresh expansions. ``max_len`` counts generated tokens including EOS.
    """
    if width < 1:
        raise ConfigError("beam width must be >= 1")
    src_ids = np.asarray(src_ids, dtype=np.int64)
    if src_ids.size == 0:
        raise EmptySourceError("cannot decode an empty source")
    if max_len is None:
        max_len = default_max_len(len(src_ids))
    if max_len < 1:
        raise ConfigError("max_len must be >= 1")
    feats = None if features is None else np.asarray(features)[None]
    enc = model.encode(src_ids[None, :], feats)
    s = model.bridge_init(enc.first)
    beams = [Beam([], 0.0, False, [st.data[0] for st in s])]

    def rank(b: Beam) -> float:
        if length_normalize and b.tokens:
            return b.score / len(b.tokens)
        return b.score

    for _ in range(max_len):
        live = [b for b in beams if not b.finished]
        if not live:
            break
        k = len(live)
        prev = np.array([b.tokens[-1] if b.tokens else SOS for b in live])
        states = [nx.Tensor(np.stack([b.states[l] for b in live])) for l in range(2)]
        logits, new_states, _ = model.decode_step(prev, states, enc.repeat(k))
        logp = _log_softmax_rows(logits.data)
        candidates = [b for b in beams if b.finished]
        totals = np.array([b.score for b in live])[:, None] + logp
        # only the best `width` expansions can survive
        flat = np.argsort(-totals, axis=None, kind="stable")[:width]
        for idx in flat:
            row, tok = divmod(int(idx), logp.shape[1])
            parent = live[row]
            candidates.append(
                Beam(
                    parent.tokens + [tok],
                    float(totals[row, tok]),
                    tok == EOS,
                    [new_states[0].data[row], new_states[1].data[row]],
                )
            )
        candidates.sort(key=rank, reverse=True)
        beams = candidates[:width]
    return max(beams, key=rank)


def greedy_decode(model: Seq2Seq, src_ids, max_len: int | None = None, features=None) -> list[int]:
    src_ids = np.asarray(src_ids, dtype=np.int64)
    if max_len is None:
        max_len = default_max_len(len(src_ids))
    feats = None if features is None else np.asarray(features)[None]
    enc = model.encode(src_ids[None, :], feats)
    states = model.bridge_init(enc.first)
    prev, out = SOS, []
    for _ in range(max_len):
        logits, states, _ = model.decode_step(np.array([prev]), states, enc)
        prev = int(logits.data[0].argmax())
        out.append(prev)
        if prev == EOS:
            break
    return out


def greedy_decode_batch(model: Seq2Seq, batch_src, lengths, features=None, max_len: int = 100) -> list[list[int]]:
    """Greedy decoding of many sources at once (used for quick training checks)."""
    enc: EncoderOutput = model.encode(batch_src, features, lengths)
    states = model.bridge_init(enc.first)
    B = batch_src.shape[0]
    prev = np.full(B, SOS)
    outs: list[list[int]] = [[] for _ in range(B)]
    done = np.zeros(B, dtype=bool)
    for _ in range(max_len):
        logits, states, _ = model.decode_step(prev, states, enc)
        prev = logits.data.argmax(axis=-1)
        for i in np.flatnonzero(~done):
            outs[i].append(int(prev[i]))
        done |= prev == EOS
        if done.all():
            break
    return outs


_REPEAT = re.compile(r"(.+?)\1{5,}", re.DOTALL)


def clamp_repetitions(text: str, max_reps: int = 5) -> str:
    """Cut every run of more than ``max_reps`` consecutive copies of a unit down to ``max_reps``.

    Smallest unit first, left to right, until nothing changes.
    """
    if max_reps < 1:
        raise ConfigError("max_reps must be >= 1")
    pattern = _REPEAT if max_reps == 5 else re.compile(r"(.+?)\1{%d,}" % max_reps, re.DOTALL)
    while True:
        clamped = pattern.sub(lambda m: m.group(1) * max_reps, text)
        if clamped == text:
            return text
        text = clamped


class Corrector:
    """Full inference path: features, beam search, repetition clamp."""

    def __init__(self, model: Seq2Seq, vocab: Vocabulary, provider=None, width: int = 5, length_normalize: bool = False):
        self.model = model
        self.vocab = vocab
        self.provider = provider
        self.width = width
        self.length_normalize = length_normalize

    def encode_source(self, sentence: str):
        text = normalize_spaces(sentence)
        ids = self.vocab.encode(text) + [EOS]
        feats = source_features(self.provider, [text], len(ids), self.model.dtype)
        return np.array(ids), None if feats is None else feats[0]

    def correct(self, sentence: str) -> str:
        if not sentence:
            return ""
        ids, feats = self.encode_source(sentence)
        best = beam_search(self.model, ids, self.width, features=feats, length_normalize=self.length_normalize)
        return clamp_repetitions(self.vocab.decode(best.tokens))

    def correct_lines(self, lines):
        return [self.correct(line) for line in lines]


def correct_sentence(model: Seq2Seq, vocab: Vocabulary, provider, sentence: str, width: int = 5) -> str:
    return Corrector(model, vocab, provider, width).correct(sentence)
