"""Synthetic noisy/clean sentence pairs for desk-scale experiments.

Noise imitates three common error types: a doubled letter, two swapped
adjacent letters, and a deleted space between words.
"""

from __future__ import annotations

import numpy as np

from .corpus import AnnotatedSentence, Edit

LETTERS = "abcdefghijklmnopqrs"


def make_lexicon(rng: np.random.Generator, size: int = 60, letters: str = LETTERS, min_len: int = 3, max_len: int = 6) -> list[str]:
    words: set[str] = set()
    while len(words) < size:
        n = int(rng.integers(min_len, max_len + 1))
        words.add("".join(rng.choice(list(letters), size=n)))
    return sorted(words)


def _double(word: str, rng) -> str:
    i = int(rng.integers(len(word)))
    return word[: i + 1] + word[i:]


def _swap(word: str, rng) -> str:
    if len(word) < 2:
        return _double(word, rng)
    i = int(rng.integers(len(word) - 1))
    if word[i] == word[i + 1]:
        return _double(word, rng)
    return word[:i] + word[i + 1] + word[i] + word[i + 2 :]


def noisy_sentence(rng: np.random.Generator, lexicon, min_words: int = 2, max_words: int = 4, max_noise: int = 2) -> AnnotatedSentence:
    """A clean sentence corrupted by up to ``max_noise`` operations, with gold edits back to it."""
    n = int(rng.integers(min_words, max_words + 1))
    clean = [lexicon[int(i)] for i in rng.integers(len(lexicon), size=n)]
    tokens = list(clean)
    groups = [[i] for i in range(n)]  # clean word indices covered by each noisy token
    for _ in range(int(rng.integers(0, max_noise + 1))):
        kind = rng.choice(["double", "swap", "merge"])
        if kind == "merge" and len(tokens) > 1:
            i = int(rng.integers(len(tokens) - 1))
            tokens[i : i + 2] = [tokens[i] + tokens[i + 1]]
            groups[i : i + 2] = [groups[i] + groups[i + 1]]
        else:
            i = int(rng.integers(len(tokens)))
            tokens[i] = _double(tokens[i], rng) if kind == "double" else _swap(tokens[i], rng)
    edits = []
    for pos, (tok, group) in enumerate(zip(tokens, groups)):
        target = " ".join(clean[g] for g in group)
        if tok != target:
            edits.append(Edit(pos, pos + 1, target))
    return AnnotatedSentence(tokens, edits)


def make_corpus(n_pairs: int = 500, seed: int = 0, lexicon_size: int = 60, **kwargs) -> list[AnnotatedSentence]:
    rng = np.random.default_rng(seed)
    lexicon = make_lexicon(rng, lexicon_size)
    return [noisy_sentence(rng, lexicon, **kwargs) for _ in range(n_pairs)]
