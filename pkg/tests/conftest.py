"""Shared fixtures and brute-force reference implementations."""

from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np
import pytest

from hierptr.treebank import Sentence, Token, read_conllu

DATA = Path(__file__).parent / "data"
FIG1_HEADS = [4, 3, 1, 0, 4, 4]
FIG1_LABELS = ["nsubj", "cc", "conj", "root", "obj", "advmod"]


@pytest.fixture
def fig1_path() -> Path:
    return DATA / "figure1.conllu"


@pytest.fixture
def fig1() -> Sentence:
    return read_conllu(DATA / "figure1.conllu")[0]


def brute_valid(heads) -> bool:
    """Every chain reaches 0 within n hops, no self-loops, heads in range."""
    n = len(heads)
    for i, h in enumerate(heads, start=1):
        if not 0 <= h <= n or h == i:
            return False
    for start in range(1, n + 1):
        node, hops = start, 0
        while node != 0:
            node = heads[node - 1]
            hops += 1
            if hops > n:
                return False
    return True


def all_head_arrays(n: int):
    return itertools.product(range(n + 1), repeat=n)


def all_trees(n: int) -> list[list[int]]:
    return [list(h) for h in all_head_arrays(n) if brute_valid(h)]


def brute_projective(heads) -> bool:
    arcs = [(min(h, d), max(h, d)) for d, h in enumerate(heads, start=1)]
    for (a, b), (c, d) in itertools.combinations(arcs, 2):
        if a < c < b < d or c < a < d < b:
            return False
    return True


def random_tree(n: int, rng: np.random.Generator) -> list[int]:
    """Uniform-ish random tree by attaching a random permutation to earlier nodes or root."""
    order = [int(i) + 1 for i in rng.permutation(n)]
    heads = [0] * n
    for k, w in enumerate(order):
        heads[w - 1] = 0 if k == 0 else int(rng.choice([0] + order[:k])) if rng.random() < 0.1 else order[int(rng.integers(0, k))]
    return heads


def make_sentence(heads, labels=None, forms=None, upos=None, sid=None) -> Sentence:
    n = len(heads)
    labels = labels or ["dep" if h else "root" for h in heads]
    forms = forms or [f"w{i}" for i in range(1, n + 1)]
    upos = upos or ["X"] * n
    return Sentence([Token(i, forms[i - 1], upos[i - 1], heads[i - 1], labels[i - 1]) for i in range(1, n + 1)], id=sid)


# Acceptance results, filled in by test_acceptance and echoed after the run.
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {text}")
