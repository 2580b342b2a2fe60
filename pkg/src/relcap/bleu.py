"""Corpus-level BLEU (modified n-gram precision with brevity penalty)."""

from __future__ import annotations

import math
import warnings
from collections import Counter
from typing import Sequence


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def modified_precision(candidates, references, n: int) -> tuple[int, int]:
    """Clipped n-gram matches and total candidate n-grams over the corpus."""
    matched = total = 0
    for cand, refs in zip(candidates, references):
        counts = ngrams(cand, n)
        max_ref: Counter = Counter()
        for ref in refs:
            for g, c in ngrams(ref, n).items():
                max_ref[g] = max(max_ref[g], c)
        matched += sum(min(c, max_ref[g]) for g, c in counts.items())
        total += sum(counts.values())
    return matched, total


def brevity_penalty(candidates, references) -> float:
    c = sum(len(x) for x in candidates)
    # closest reference length per sentence, shorter wins ties
    r = sum(min((abs(len(ref) - len(cand)), len(ref)) for ref in refs)[1] for cand, refs in zip(candidates, references))
    if c == 0:
        return 0.0
    return 1.0 if c > r else math.exp(1.0 - r / c)


def bleu(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[Sequence[str]]], n: int = 4) -> list[float]:
    """BLEU@1..BLEU@n with uniform weights.

    ``references[i]`` is the list of reference token lists for candidate ``i``.
    """
    if not candidates or len(candidates) != len(references):
        raise ValueError("need equally many (non-zero) candidates and reference sets")
    if any(len(c) == 0 for c in candidates):
        warnings.warn("empty candidate caption", stacklevel=2)
    if sum(len(c) for c in candidates) == 0:
        return [0.0] * n
    bp = brevity_penalty(candidates, references)
    log_p = []
    scores = []
    for k in range(1, n + 1):
        m, t = modified_precision(candidates, references, k)
        log_p.append(math.log(m / t) if m > 0 and t > 0 else -math.inf)
        mean = sum(log_p) / k
        scores.append(0.0 if mean == -math.inf else bp * math.exp(mean))
    return scores
