"""Synthetic treebanks for smoke tests and the overfitting harness."""

from __future__ import annotations

import numpy as np

from .treebank import Sentence, Token

TAGS = ("NOUN", "VERB", "ADJ", "ADP", "DET")


def random_heads(n: int, rng: np.random.Generator, projective: bool = False) -> list[int]:
    """A random valid head array (one word under the root when ``projective``)."""
    if projective:
        heads = [0] * n

        def build(lo: int, hi: int, parent: int) -> None:
            if lo > hi:
                return
            r = int(rng.integers(lo, hi + 1))
            heads[r - 1] = parent
            build(lo, r - 1, r)
            build(r + 1, hi, r)

        build(1, n, 0)
        return heads
    order = [int(i) + 1 for i in rng.permutation(n)]
    heads = [0] * n
    for k, w in enumerate(order):
        heads[w - 1] = 0 if k == 0 else order[int(rng.integers(0, k))]
    return heads


def toy_corpus(n_sentences: int = 32, max_len: int = 10, vocab_size: int = 20, seed: int = 0,
               min_len: int = 2, projective: bool = False) -> list[Sentence]:
    """Random sentences over ``vocab_size`` word types with random trees.

    Each word type has a fixed POS tag; labels depend only on the dependent's
    tag and the arc direction, so they are learnable from the words alone.
    """
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_sentences):
        n = int(rng.integers(min_len, max_len + 1))
        words = rng.integers(0, vocab_size, size=n)
        heads = random_heads(n, rng, projective)
        tokens = []
        for i, (w, h) in enumerate(zip(words, heads), start=1):
            tag = TAGS[int(w) % len(TAGS)]
            if h == 0:
                label = "root"
            else:
                label = f"{tag.lower()}-{'l' if i < h else 'r'}"
            tokens.append(Token(i, f"w{int(w):02d}", tag, h, label))
        out.append(Sentence(tokens, id=f"toy-{k + 1}"))
    return out


def overfit_setup(system: str, fusion: str, gate: str = "gate1", epochs: int = 200, seed: int = 0):
    """Model and training configs for the memorization check.

    Widths are capped at 64 and the optimizer keeps its defaults (batch 32,
    lr 0.001). Dropout, UNK replacement and the plateau decay are switched
    off: they serve generalization, and with one update per epoch the
    plateau schedule shrinks the step size long before the data is fit.
    """
    from .model import ModelConfig
    from .train import TrainConfig

    mcfg = ModelConfig(system=system, fusion=fusion, gate=gate, lstm_dropout=0.0, emb_dropout=0.0,
                       unk_replace=0.0).tiny()
    tcfg = TrainConfig(max_epochs=epochs, patience=epochs + 1, seed=seed)
    return mcfg, tcfg
