"""Greedy and beam-search caption generation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np


class StepState(Protocol):
    tokens: tuple[int, ...]
    logprobs: np.ndarray


@dataclass
class BeamHypothesis:
    tokens: tuple[int, ...]  # generated ids, <S> excluded
    logprob: float
    finished: bool


def greedy_search(start: StepState, advance: Callable[[StepState, int], StepState], eos_id: int, max_len: int) -> BeamHypothesis:
    """Append the arg-max token until ``eos_id`` or ``max_len`` tokens."""
    state, out, score = start, [], 0.0
    while len(out) < max_len:
        tok = int(np.argmax(state.logprobs))
        score += float(state.logprobs[tok])
        out.append(tok)
        if tok == eos_id:
            return BeamHypothesis(tuple(out), score, True)
        if len(out) < max_len:
            state = advance(state, tok)
    return BeamHypothesis(tuple(out), score, False)


def beam_search(
    start: StepState,
    advance: Callable[[StepState, int], StepState],
    eos_id: int,
    beam: int,
    max_len: int,
) -> BeamHypothesis:
    """Beam search on cumulative log-probability (no length normalisation).

    Hypotheses that emit ``eos_id`` retire; the best retired one is returned,
    or the best unfinished one if nothing finished within ``max_len``.
    Ties are broken toward lower token ids, so ``beam=1`` is greedy search.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    alive: list[tuple[float, tuple[int, ...], StepState]] = [(0.0, (), start)]
    finished: list[BeamHypothesis] = []
    for step in range(max_len):
        cands = []
        for score, toks, state in alive:
            lp = state.logprobs
            top = np.argsort(-lp, kind="stable")[:beam]
            cands.extend((score + float(lp[t]), toks + (int(t),), state) for t in top)
        cands.sort(key=lambda c: (-c[0], c[1]))
        alive = []
        for score, toks, state in cands[:beam]:
            if toks[-1] == eos_id:
                finished.append(BeamHypothesis(toks, score, True))
            elif step + 1 < max_len:
                alive.append((score, toks, advance(state, toks[-1])))
            else:
                alive.append((score, toks, state))
        if not alive:
            break
        best_done = max((h.logprob for h in finished), default=-np.inf)
        # log-probs only fall as tokens are added, so nothing alive can win
        if best_done >= max(s for s, _, _ in alive):
            break
    if finished:
        return max(finished, key=lambda h: h.logprob)
    score, toks, _ = max(alive, key=lambda c: c[0])
    return BeamHypothesis(toks, score, False)


def _decoder_fns(model, memory: np.ndarray):
    dec = model.decoder
    start = dec.start(memory, model.vocab.bos_id)
    return start, dec.advance


def greedy_decode(model, memory: np.ndarray, max_len: int | None = None) -> BeamHypothesis:
    start, advance = _decoder_fns(model, memory)
    return greedy_search(start, advance, model.vocab.eos_id, max_len or model.cfg.max_len)


def beam_decode(model, memory: np.ndarray, beam: int = 3, max_len: int | None = None) -> BeamHypothesis:
    start, advance = _decoder_fns(model, memory)
    return beam_search(start, advance, model.vocab.eos_id, beam, max_len or model.cfg.max_len)


def sequence_logprob(model, memory: np.ndarray, tokens: Sequence[int]) -> float:
    """log p(tokens | memory) under the decoder, <S> prepended."""
    state = model.decoder.start(memory, model.vocab.bos_id)
    total = 0.0
    for k, t in enumerate(tokens):
        total += float(state.logprobs[t])
        if k + 1 < len(tokens):
            state = model.decoder.advance(state, t)
    return total


def caption_records(model, records, beam: int = 1, max_len: int | None = None) -> list[list[str]]:
    """Decode every record (encoded within its context); returns token lists."""
    out = []
    for mem in model.memories(records):
        hyp = greedy_decode(model, mem, max_len) if beam == 1 else beam_decode(model, mem, beam, max_len)
        out.append(model.vocab.decode(hyp.tokens))
    return out
