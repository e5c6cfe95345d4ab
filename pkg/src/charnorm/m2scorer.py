"""MaxMatch (M2) scoring of system output against gold word-level edits.

The system's edits are not given; they are recovered from the source and the
hypothesis. All minimum-cost token alignments are collected in a lattice,
runs of adjacent non-match operations may be merged into phrase edits (up to
``window`` source tokens), and the segmentation that agrees most with the gold
edits is chosen.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import AnnotatedSentence, Edit
from .errors import DataError

MERGE_WINDOW = 4

EditKey = tuple[int, int, str]


def normalize_replacement(text: str) -> str:
    return " ".join(text.split())


@dataclass
class Lattice:
    """Nodes ``(i, j)`` lying on some minimum-cost alignment, with their operations."""

    source: list[str]
    hypothesis: list[str]
    cost: int
    nodes: list[tuple[int, int]]
    edges: dict[tuple[int, int], list[tuple[tuple[int, int], str]]] = field(default_factory=dict)

    def edits_from(self, node, window: int = MERGE_WINDOW) -> list[tuple[tuple[int, int], EditKey]]:
        """Every phrase edit starting at ``node``: a chain of one or more non-match operations."""
        found = {}
        stack = [node]
        seen = {node}
        while stack:
            u = stack.pop()
            for v, op in self.edges.get(u, ()):
                if op == "match" or v in seen or v[0] - node[0] > window:
                    continue
                seen.add(v)
                found[v] = (node[0], v[0], " ".join(self.hypothesis[node[1] : v[1]]))
                stack.append(v)
        return sorted(found.items())


def _distances(a: Sequence[str], b: Sequence[str]) -> list[list[int]]:
    n, m = len(a), len(b)
    D = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        D[i][0] = i
    for j in range(m + 1):
        D[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = 0 if a[i - 1] == b[j - 1] else 1
            D[i][j] = min(D[i - 1][j] + 1, D[i][j - 1] + 1, D[i - 1][j - 1] + sub)
    return D


def align(source: Sequence[str], hypothesis: Sequence[str]) -> Lattice:
    """Token Levenshtein lattice (match 0; substitution, insertion, deletion 1)."""
    src, hyp = list(source), list(hypothesis)
    n, m = len(src), len(hyp)
    fwd = _distances(src, hyp)
    back_rev = _distances(src[::-1], hyp[::-1])
    back = [[back_rev[n - i][m - j] for j in range(m + 1)] for i in range(n + 1)]
    total = fwd[n][m]

    def on_path(i, j):
        return fwd[i][j] + back[i][j] == total

    edges: dict = {}
    nodes = []
    for i in range(n + 1):
        for j in range(m + 1):
            if not on_path(i, j):
                continue
            nodes.append((i, j))
            out = []
            if i < n and j < m:
                same = src[i] == hyp[j]
                c = 0 if same else 1
                if fwd[i][j] + c + back[i + 1][j + 1] == total:
                    out.append(((i + 1, j + 1), "match" if same else "sub"))
            if i < n and fwd[i][j] + 1 + back[i + 1][j] == total:
                out.append(((i + 1, j), "del"))
            if j < m and fwd[i][j] + 1 + back[i][j + 1] == total:
                out.append(((i, j + 1), "ins"))
            if out:
                edges[(i, j)] = out
    return Lattice(src, hyp, total, nodes, edges)


def maxmatch_select(lattice: Lattice, gold: Iterable[Edit | EditKey], window: int = MERGE_WINDOW) -> list[EditKey]:
    """System edit set with the most gold matches.

    Ties go to fewer edits, then to the lexicographically smallest edit list
    (leftmost edits first).
    """
    gold_keys = {g.key() if isinstance(g, Edit) else (g[0], g[1], normalize_replacement(g[2])) for g in gold}
    start = (0, 0)
    end = (len(lattice.source), len(lattice.hypothesis))
    # best[node] = (-tp, n_edits, edits)
    best: dict[tuple[int, int], tuple[int, int, tuple]] = {start: (0, 0, ())}

    def relax(v, cand):
        cur = best.get(v)
        if cur is None or cand < cur:
            best[v] = cand

    for u in lattice.nodes:  # row-major order is topological
        if u not in best:
            continue
        neg_tp, count, edits = best[u]
        for v, op in lattice.edges.get(u, ()):
            if op == "match":
                relax(v, (neg_tp, count, edits))
        for v, key in lattice.edits_from(u, window):
            hit = 1 if (key[0], key[1], normalize_replacement(key[2])) in gold_keys else 0
            relax(v, (neg_tp - hit, count + 1, edits + (key,)))
    return list(best[end][2])


@dataclass
class ScoreReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return 1.0 if self.tp + self.fp == 0 else self.tp / (self.tp + self.fp)

    @property
    def recall(self) -> float:
        return 1.0 if self.tp + self.fn == 0 else self.tp / (self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)

    def __add__(self, other: "ScoreReport") -> "ScoreReport":
        return ScoreReport(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def format(self) -> str:
        return (
            f"Precision: {self.precision:.4f}\n"
            f"Recall: {self.recall:.4f}\n"
            f"F_1: {self.f1:.4f}\n"
            f"TP: {self.tp}\nFP: {self.fp}\nFN: {self.fn}\n"
        )


def score_sentence(source, hypothesis, gold, window: int = MERGE_WINDOW) -> tuple[ScoreReport, list[EditKey]]:
    """Counts for one sentence; ``source``/``hypothesis`` are token lists or strings."""
    src = source.split() if isinstance(source, str) else list(source)
    hyp = hypothesis.split() if isinstance(hypothesis, str) else list(hypothesis)
    gold_keys = {g.key() if isinstance(g, Edit) else (g[0], g[1], normalize_replacement(g[2])) for g in gold}
    system = maxmatch_select(align(src, hyp), gold_keys, window)
    tp = sum(1 for e in system if (e[0], e[1], normalize_replacement(e[2])) in gold_keys)
    return ScoreReport(tp, len(system) - tp, len(gold_keys) - tp), system


def score_corpus(items, window: int = MERGE_WINDOW) -> ScoreReport:
    """Micro-averaged report over ``(source, hypothesis, gold edits)`` triples."""
    report = ScoreReport()
    for item in items:
        if len(item) != 3:
            raise DataError("score_corpus expects (source, hypothesis, gold) triples")
        report = report + score_sentence(*item, window=window)[0]
    return report


def score_m2(sentences: Sequence[AnnotatedSentence], hypotheses: Sequence[str], annotator: int = 0, window: int = MERGE_WINDOW) -> ScoreReport:
    if len(sentences) != len(hypotheses):
        raise DataError(f"{len(sentences)} gold sentences but {len(hypotheses)} hypotheses")
    return score_corpus(((s.tokens, h, s.edits_for(annotator)) for s, h in zip(sentences, hypotheses)), window)
