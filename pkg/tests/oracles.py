"""Independent reference implementations and frozen hand-computed values.

Nothing here imports the package under test; each oracle is written from
the defining formula with plain Python loops or brute-force linear algebra.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

# --- frozen hand values --------------------------------------------------------

# boxes (cx, cy, w, h): i = (0.5, 0.5, 0.2, 0.4), j = (0.7, 0.4, 0.4, 0.2)
# overlap 0.1 x 0.2 = 0.02, union 0.08 + 0.08 - 0.02 = 0.14
SPATIAL_HAND = {
    "bi": (0.5, 0.5, 0.2, 0.4),
    "bj": (0.7, 0.4, 0.4, 0.2),
    "feature": (1 / math.sqrt(2), -1 / (2 * math.sqrt(2)), 1.0, 1 / 7, 0.5, 2.0),
}

# scalar Adam, lr=0.1, betas (0.8, 0.999), eps 1e-8, x0 = 1, grads 0.5, -0.2, 0.1
ADAM_TRACE = {
    "x0": 1.0,
    "lr": 0.1,
    "grads": (0.5, -0.2, 0.1),
    "params": (0.900000002, 0.8708155089428313, 0.8371056169982382),
}

# "the the the" vs "the cat": clipped unigram matches 1 of 3
BLEU_CLIP = {"candidate": "the the the".split(), "references": ["the cat".split()], "p1": 1 / 3}

# candidate length 4, closest reference length 6 -> BP = exp(1 - 6/4)
BLEU_BP = {
    "candidate": "the cat sat down".split(),
    "references": ["the cat sat down on mats".split(), "a cat sat".split() + ["here", "now", "ok", "x"]],
    "bp": math.exp(1 - 6 / 4),
}


# --- oracles --------------------------------------------------------------------


def spatial_feature(bi, bj):
    """Written from corners rather than centre offsets."""
    ax, ay, aw, ah = bi
    bx, by, bw, bh = bj
    a = (ax - aw / 2, ay - ah / 2, ax + aw / 2, ay + ah / 2)
    b = (bx - bw / 2, by - bh / 2, bx + bw / 2, by + bh / 2)
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    root = math.sqrt(aw * ah)
    return [
        ((b[0] + b[2]) / 2 - (a[0] + a[2]) / 2) / root,
        ((b[1] + b[3]) / 2 - (a[1] + a[3]) / 2) / root,
        math.sqrt(bw * bh) / root,
        inter / union,
        aw / ah,
        bw / bh,
    ]


def renormalized(a):
    """D^-1/2 (A + I) D^-1/2 by explicit diagonal matrices."""
    a = np.asarray(a, dtype=np.float64)
    at = a + np.eye(len(a))
    d = np.diag(1.0 / np.sqrt(at.sum(axis=1)))
    return d @ at @ d


def xe_loop(dist, targets, pad_id=0):
    total, count = 0.0, 0
    flat_d = np.asarray(dist).reshape(-1, np.asarray(dist).shape[-1])
    for row, t in zip(flat_d, np.asarray(targets).reshape(-1)):
        if t == pad_id:
            continue
        total -= math.log(row[t])
        count += 1
    return total / count


def gcn_textbook(a_hat, h, weights):
    """relu(A_hat H W) layer by layer with explicit sums."""
    for w in weights:
        n, d = h.shape
        out = np.zeros((n, w.shape[1]))
        for i in range(n):
            agg = sum(a_hat[i, j] * h[j] for j in range(n))
            out[i] = np.maximum(agg @ w, 0.0)
        h = out
    return h


def exhaustive_best(step_logprob, vocab, length, eos):
    """Best finished sequence (ending in ``eos``, at most ``length`` tokens).

    Enumerates every token string; ``step_logprob(prefix) -> array`` over
    ``vocab``.  Returns ``(None, -inf)`` when nothing can finish.
    """
    best, best_seq = -math.inf, None
    for n in range(1, length + 1):
        for seq in itertools.product(range(vocab), repeat=n):
            if seq[-1] != eos or eos in seq[:-1]:
                continue
            score = sum(step_logprob(seq[:k])[seq[k]] for k in range(n))
            if score > best:
                best, best_seq = score, seq
    return best_seq, best


def bleu_reference(cands, refs, n=4):
    """Textbook corpus BLEU with explicit dictionaries."""
    out = []
    logs = []
    c_len = sum(len(c) for c in cands)
    r_len = 0
    for c, rs in zip(cands, refs):
        lens = sorted(len(r) for r in rs)
        r_len += min(lens, key=lambda L: (abs(L - len(c)), L))
    bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
    for k in range(1, n + 1):
        num = den = 0
        for c, rs in zip(cands, refs):
            grams = {}
            for i in range(len(c) - k + 1):
                g = tuple(c[i : i + k])
                grams[g] = grams.get(g, 0) + 1
            for g, cnt in grams.items():
                mx = 0
                for r in rs:
                    rc = sum(1 for i in range(len(r) - k + 1) if tuple(r[i : i + k]) == g)
                    mx = max(mx, rc)
                num += min(cnt, mx)
                den += cnt
        logs.append(math.log(num / den) if num else -math.inf)
        avg = sum(logs) / k
        out.append(0.0 if avg == -math.inf else bp * math.exp(avg))
    return out


# fixtures/bleu_*.tsv: c = r = 18 so BP = 1; clipped matches per order
# 1-grams 17/18, 2-grams 11/13, 3-grams 7/8, 4-grams 4/4
_P = (17 / 18, 11 / 13, 7 / 8, 1.0)
BLEU_FIXTURE = tuple(math.prod(_P[:k]) ** (1 / k) for k in range(1, 5))
