"""Word error rate and corpus-level BLEU."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence


@dataclass
class EditCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_len: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.ref_len if self.ref_len else 0.0

    def __add__(self, other: EditCounts) -> EditCounts:
        return EditCounts(self.substitutions + other.substitutions,
                          self.deletions + other.deletions,
                          self.insertions + other.insertions,
                          self.ref_len + other.ref_len)


def edit_counts(ref: Sequence[str], hyp: Sequence[str]) -> EditCounts:
    """Minimum-cost alignment with unit costs.

    Among optimal alignments the backtrace prefers, at every cell, a
    substitution (or match), then an insertion, then a deletion.
    """
    n, m = len(ref), len(hyp)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        cost[i][0] = i
    for j in range(m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = cost[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1])
            cost[i][j] = min(diag, cost[i][j - 1] + 1, cost[i - 1][j] + 1)
    counts = EditCounts(ref_len=n)
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i][j] == cost[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            counts.substitutions += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and cost[i][j] == cost[i][j - 1] + 1:
            counts.insertions += 1
            j -= 1
        else:
            counts.deletions += 1
            i -= 1
    return counts


def wer(ref: Sequence[str], hyp: Sequence[str]) -> tuple[float, EditCounts]:
    if not ref:
        raise ValueError("WER needs a non-empty reference")
    counts = edit_counts(ref, hyp)
    return counts.wer, counts


def corpus_wer(refs: Sequence[Sequence[str]], hyps: Sequence[Sequence[str]]) -> tuple[float, EditCounts]:
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    total = EditCounts()
    for r, h in zip(refs, hyps):
        if not r:
            raise ValueError("WER needs non-empty references")
        total = total + edit_counts(r, h)
    return total.wer, total


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuStats:
    matches: list[int] = field(default_factory=lambda: [0] * 4)
    totals: list[int] = field(default_factory=lambda: [0] * 4)
    ref_len: int = 0
    hyp_len: int = 0

    @property
    def brevity_penalty(self) -> float:
        if self.hyp_len == 0:
            return 0.0
        return min(1.0, math.exp(1.0 - self.ref_len / self.hyp_len))


def bleu_stats(refs: Sequence[Sequence[str]], hyps: Sequence[Sequence[str]],
               max_n: int = 4) -> BleuStats:
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    stats = BleuStats([0] * max_n, [0] * max_n)
    for ref, hyp in zip(refs, hyps):
        stats.ref_len += len(ref)
        stats.hyp_len += len(hyp)
        for k in range(1, max_n + 1):
            h, r = _ngrams(hyp, k), _ngrams(ref, k)
            stats.matches[k - 1] += sum(min(c, r[g]) for g, c in h.items())
            stats.totals[k - 1] += max(len(hyp) - k + 1, 0)
    return stats


def bleu(refs: Sequence[Sequence[str]], hyps: Sequence[Sequence[str]], max_n: int = 4,
         smooth: bool = False) -> list[float]:
    """Corpus BLEU-1..max_n with uniform weights and a single reference each.

    Without smoothing, a zero match count at any order k <= n makes BLEU-n 0.
    ``smooth=True`` adds one to numerator and denominator for orders k > 1.
    """
    stats = bleu_stats(refs, hyps, max_n)
    return scores_from_stats(stats, smooth)


def scores_from_stats(stats: BleuStats, smooth: bool = False) -> list[float]:
    bp = stats.brevity_penalty
    scores = []
    log_sum = 0.0
    dead = False
    for k, (m, t) in enumerate(zip(stats.matches, stats.totals), start=1):
        if smooth and k > 1:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            dead = True
        if not dead:
            log_sum += math.log(m / t)
        scores.append(0.0 if dead else bp * math.exp(log_sum / k))
    return scores


@dataclass
class ScoreReport:
    wer: float
    bleu: list[float]
    edits: EditCounts
    bleu_stats: BleuStats
    n_samples: int = 0

    def lines(self) -> list[str]:
        out = [f"wer={self.wer!r}"]
        out += [f"bleu{k}={v!r}" for k, v in enumerate(self.bleu, start=1)]
        e, b = self.edits, self.bleu_stats
        out += [f"substitutions={e.substitutions}", f"deletions={e.deletions}",
                f"insertions={e.insertions}", f"ref_len={e.ref_len}",
                f"samples={self.n_samples}",
                f"ngram_matches={','.join(map(str, b.matches))}",
                f"ngram_totals={','.join(map(str, b.totals))}",
                f"text_ref_len={b.ref_len}", f"text_hyp_len={b.hyp_len}",
                f"brevity_penalty={b.brevity_penalty!r}"]
        return out

    def format(self) -> str:
        return "\n".join(self.lines()) + "\n"


def parse_report(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            out[key] = value
    return out


def score(gloss_refs, gloss_hyps, text_refs, text_hyps, smooth: bool = False) -> ScoreReport:
    w, edits = corpus_wer(gloss_refs, gloss_hyps)
    stats = bleu_stats(text_refs, text_hyps)
    return ScoreReport(w, scores_from_stats(stats, smooth), edits, stats, len(gloss_refs))
