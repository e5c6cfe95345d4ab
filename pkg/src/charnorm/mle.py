"""Most-frequent-action baseline learned from gold edits.

Every source phrase of up to ``K`` tokens is either kept or replaced,
whichever the training annotations did most often. Insertions before a token
are folded into a replacement of that token (``"x"`` -> ``"ins x"``);
insertions at the end of a sentence are stored under :data:`END_KEY`.
"""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

from .corpus import AnnotatedSentence
from .errors import FormatError

KEEP = None
END_KEY = "</s>"
MAX_PHRASE = 4


class ActionTable:
    """Phrase -> Counter over actions; an action is KEEP (None) or a replacement string."""

    def __init__(self, max_phrase: int = MAX_PHRASE):
        self.max_phrase = max_phrase
        self.counts: dict[str, Counter] = {}

    def add(self, phrase: str, action: str | None, count: int = 1) -> None:
        self.counts.setdefault(phrase, Counter())[action] += count

    def __contains__(self, phrase: str) -> bool:
        return phrase in self.counts

    def __getitem__(self, phrase: str) -> Counter:
        return self.counts[phrase]

    def __len__(self) -> int:
        return len(self.counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, ActionTable) and self.counts == other.counts

    def best(self, phrase: str) -> str | None:
        """Majority action; KEEP wins ties, otherwise the smallest replacement string."""
        counter = self.counts[phrase]
        top = max(counter.values())
        winners = [a for a, c in counter.items() if c == top]
        if KEEP in winners:
            return KEEP
        return min(winners)

    # -- serialization --------------------------------------------------------

    def dumps(self) -> str:
        lines = []
        for phrase in sorted(self.counts):
            for action, count in sorted(self.counts[phrase].items(), key=lambda kv: (kv[0] is not None, kv[0] or "")):
                kind = "KEEP" if action is KEEP else "REPLACE"
                lines.append(f"{count}\t{kind}\t{phrase}\t{action or ''}\n")
        return "".join(lines)

    @classmethod
    def loads(cls, text: str, max_phrase: int = MAX_PHRASE) -> "ActionTable":
        table = cls(max_phrase)
        for number, line in enumerate(text.splitlines(), start=1):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4 or parts[1] not in ("KEEP", "REPLACE"):
                raise FormatError(f"action table line {number}: {line!r}")
            try:
                count = int(parts[0])
            except ValueError:
                raise FormatError(f"action table line {number}: bad count {parts[0]!r}") from None
            table.add(parts[2], KEEP if parts[1] == "KEEP" else parts[3], count)
        return table


def _overlaps(i: int, j: int, spans: Sequence[tuple[int, int]]) -> bool:
    # an insertion at s claims token s
    return any(s < j and i < max(e, s + 1) for s, e in spans)


def build_table(sentences: Iterable[AnnotatedSentence], max_phrase: int = MAX_PHRASE, annotator: int = 0) -> ActionTable:
    table = ActionTable(max_phrase)
    for sent in sentences:
        toks = sent.tokens
        n = len(toks)
        edits = sent.edits_for(annotator)
        spans = [(e.start, e.end) for e in edits]
        final_insert = False
        for e in edits:
            repl = " ".join(e.replacement.split())
            if e.start == e.end:
                if e.start == n:
                    table.add(END_KEY, repl)
                    final_insert = True
                else:
                    table.add(toks[e.start], f"{repl} {toks[e.start]}".strip())
            else:
                table.add(" ".join(toks[e.start : e.end]), repl)
        if not final_insert:
            table.add(END_KEY, KEEP)
        for i in range(n):
            for j in range(i + 1, min(n, i + max_phrase) + 1):
                if not _overlaps(i, j, spans):
                    table.add(" ".join(toks[i:j]), KEEP)
    return table


def apply(tokens: Sequence[str], table: ActionTable) -> list[str]:
    """Single left-to-right pass, longest known phrase first."""
    out: list[str] = []
    i, n = 0, len(tokens)
    while i < n:
        for L in range(min(table.max_phrase, n - i), 0, -1):
            phrase = " ".join(tokens[i : i + L])
            if phrase in table:
                action = table.best(phrase)
                out.extend(tokens[i : i + L] if action is KEEP else action.split())
                i += L
                break
        else:
            out.append(tokens[i])
            i += 1
    if END_KEY in table:
        action = table.best(END_KEY)
        if action is not KEEP:
            out.extend(action.split())
    return out


def apply_text(sentence: str, table: ActionTable) -> str:
    return " ".join(apply(sentence.split(), table))
