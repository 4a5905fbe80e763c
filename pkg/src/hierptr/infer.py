"""Greedy and beam-search decoding."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tensor, no_grad
from .model import DecodeContext, EncodedSentence, HierPtrNet
from .transition import ParserState, advance, dependent_snapshot, legal_parents
from .treebank import Sentence


@dataclass
class ParseResult:
    heads: list[int]
    labels: list[str]
    score: float  # sum of chosen step log-probabilities
    step_scores: list[float] = field(default_factory=list)


@dataclass
class BeamItem:
    state: ParserState
    s: Tensor
    c: Tensor
    history: list[Tensor]
    score: float = 0.0
    choices: list[int] = field(default_factory=list)
    step_scores: list[float] = field(default_factory=list)


def _prepare(model: HierPtrNet, sentence, ext) -> tuple[EncodedSentence, DecodeContext]:
    es = sentence if isinstance(sentence, EncodedSentence) else model.encode_sentence(sentence)
    return es, model.context(model.encode(es, ext))


def _mask(n: int, legal: Sequence[int]) -> np.ndarray:
    mask = np.ones(n + 1, dtype=bool)
    mask[list(legal)] = False
    return mask


def _labels(model: HierPtrNet, ctx: DecodeContext, heads: Sequence[int]) -> list[str]:
    logp = model.arc_label_log_probs(ctx, heads).data.copy()
    if logp.shape[1] > 2:
        logp[:, :2] = -np.inf  # never predict PAD/UNK when real labels exist
    return [model.vocab.labels[i] for i in logp.argmax(axis=1)]


def _expand(model: HierPtrNet, ctx: DecodeContext, item: BeamItem, projective: bool,
            single_root: bool) -> tuple[list[int], np.ndarray, Tensor, Tensor]:
    state = item.state
    legal = legal_parents(state, projective, single_root)
    s, c = model.step(ctx, state.focus, dependent_snapshot(state), item.history, item.s, item.c)
    logp = model.step_log_probs(ctx, s, _mask(state.n, legal)).data
    return legal, logp, s, c


def greedy_parse(model: HierPtrNet, sentence: Sentence | EncodedSentence, ext: Optional[np.ndarray] = None,
                 projective: bool = False, single_root: bool = False) -> ParseResult:
    """Attach each focus word to its highest-probability legal parent (ties -> smaller index)."""
    with no_grad():
        es, ctx = _prepare(model, sentence, ext)
        item = BeamItem(ParserState.initial(model.system, es.n), ctx.s0, ctx.c0, [])
        while not item.state.done:
            legal, logp, s, c = _expand(model, ctx, item, projective, single_root)
            p = min(legal, key=lambda q: (-logp[q], q))
            item.history.append(s)
            item.s, item.c = s, c
            item.score += float(logp[p])
            item.step_scores.append(float(logp[p]))
            advance(item.state, p)
        heads = item.state.head_array()
        return ParseResult(heads, _labels(model, ctx, heads), item.score, item.step_scores)


def beam_parse(model: HierPtrNet, sentence: Sentence | EncodedSentence, beam: int = 10,
               ext: Optional[np.ndarray] = None, projective: bool = False,
               single_root: bool = False) -> ParseResult:
    """Beam search over Shift-Attach-p sequences.

    Each item proposes its top-``beam`` legal parents; the global top-``beam``
    survive, ordered by cumulative log-probability and then by the
    lexicographically smaller choice history.
    """
    if beam < 1:
        raise ValueError("beam size must be >= 1")
    with no_grad():
        es, ctx = _prepare(model, sentence, ext)
        items = [BeamItem(ParserState.initial(model.system, es.n), ctx.s0, ctx.c0, [])]
        for _ in range(es.n):
            candidates = []
            for k, item in enumerate(items):
                legal, logp, s, c = _expand(model, ctx, item, projective, single_root)
                best = sorted(legal, key=lambda q: (-logp[q], q))[:beam]
                for p in best:
                    lp = float(logp[p])
                    candidates.append((item.score + lp, item.choices + [p], k, lp, s, c))
            candidates.sort(key=lambda cand: (-cand[0], cand[1]))
            new_items = []
            for score, choices, k, lp, s, c in candidates[:beam]:
                parent = items[k]
                state = parent.state.copy()
                advance(state, choices[-1])
                new_items.append(BeamItem(state, s, c, parent.history + [s], score, choices,
                                          parent.step_scores + [lp]))
            items = new_items
        top = items[0]
        heads = top.state.head_array()
        return ParseResult(heads, _labels(model, ctx, heads), top.score, top.step_scores)


def parse(model: HierPtrNet, sentence: Sentence | EncodedSentence, beam: int = 1,
          ext: Optional[np.ndarray] = None, projective: bool = False, single_root: bool = False) -> ParseResult:
    if beam == 1:
        return greedy_parse(model, sentence, ext, projective, single_root)
    return beam_parse(model, sentence, beam, ext, projective, single_root)


def parse_treebank(model: HierPtrNet, sentences: Sequence[Sentence], beam: int = 1,
                   ext: Optional[Sequence[np.ndarray]] = None, projective: bool = False,
                   single_root: bool = False, threads: int = 1) -> list[Sentence]:
    """Parse every sentence; returns copies with predicted heads and labels."""
    def one(k: int) -> Sentence:
        res = parse(model, sentences[k], beam, None if ext is None else ext[k], projective, single_root)
        return sentences[k].with_tree(res.heads, res.labels)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, range(len(sentences))))
    return [one(k) for k in range(len(sentences))]
