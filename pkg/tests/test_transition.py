import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hierptr.transition import (
    ParserState, System, TransitionError, apply_attach, availability_stats, dependent_snapshot,
    focus_order, legal_parents, oracle_sequence, projective_parents, run_oracle,
)
from hierptr.treebank import is_projective, validate_heads

from conftest import FIG1_HEADS, all_trees, brute_projective, make_sentence, random_tree

KINDS = list(System)


def test_focus_orders():
    assert focus_order("oi", 6) == [1, 6, 2, 5, 3, 4]
    assert focus_order("oi", 5) == [1, 5, 2, 4, 3]
    assert focus_order("l2r", 1) == [1]
    assert focus_order("r2l", 4) == [4, 3, 2, 1]
    with pytest.raises(ValueError):
        focus_order("l2r", 0)


@pytest.mark.parametrize("n", range(1, 30))
def test_oi_order_shrinks_interval(n):
    order = focus_order("oi", n)
    assert sorted(order) == list(range(1, n + 1))
    lo, hi = 1, n
    for w in order:
        assert w in (lo, hi)
        if w == lo:
            lo += 1
        else:
            hi -= 1
    assert order[-1] == n // 2 + 1


def test_oracle_figure1():
    assert oracle_sequence("l2r", FIG1_HEADS) == [4, 3, 1, 0, 4, 4]
    assert oracle_sequence("r2l", FIG1_HEADS) == [4, 4, 0, 1, 3, 4]
    assert oracle_sequence("oi", FIG1_HEADS) == [4, 4, 3, 4, 1, 0]


def test_oracle_rejects_invalid():
    with pytest.raises(TransitionError):
        oracle_sequence("l2r", [2, 1])


def _run(kind, heads, seq):
    state = ParserState.initial(kind, len(heads))
    for p in seq:
        state = apply_attach(state, p)
    return state


def test_legal_parents_examples():
    state = _run("l2r", FIG1_HEADS, [4, 3, 1])
    assert state.focus == 4
    assert legal_parents(state) == [0, 5, 6]
    fresh = ParserState.initial("oi", 5)
    assert legal_parents(fresh) == [0, 2, 3, 4, 5]
    two = _run("r2l", [0, 1], [1])  # arc 1 -> 2 built, focus is 1
    assert legal_parents(two) == [0]
    l2r = ParserState.initial("l2r", 2)
    l2r = apply_attach(l2r, 2)
    assert legal_parents(l2r) == [0]


def test_illegal_attach_names_constraint():
    state = _run("l2r", FIG1_HEADS, [4, 3, 1])
    with pytest.raises(TransitionError, match="cycle"):
        apply_attach(state, 1)
    with pytest.raises(TransitionError, match="self"):
        apply_attach(state, 4)
    done = _run("l2r", FIG1_HEADS, FIG1_HEADS)
    with pytest.raises(TransitionError):
        legal_parents(done)


def test_tracker_figure1():
    s = apply_attach(ParserState.initial("l2r", 6), 4)
    rec = s.tracker[4]
    assert (s.heads[1], rec.lm, rec.la, s.focus) == (4, 1, 1, 2)
    oi = _run("oi", FIG1_HEADS, [4, 4])
    # step 0 attaches 1 -> 4 and step 1 attaches 6 -> 4
    rec = oi.tracker[4]
    assert (rec.rm, rec.ra, rec.lm, rec.la) == (6, 6, 1, 1)
    assert (rec.lm_step, rec.rm_step) == (0, 1)


def test_snapshots_figure1():
    l2r = _run("l2r", FIG1_HEADS, [4, 3, 1])
    snap = dependent_snapshot(l2r)
    assert (snap.lm, snap.la, snap.rm, snap.ra) == (1, 1, None, None)
    assert snap.lm_step == 0
    r2l = _run("r2l", FIG1_HEADS, [4, 4])
    snap = dependent_snapshot(r2l)
    assert (r2l.focus, snap.rm, snap.ra, snap.lm, snap.la) == (4, 6, 5, None, None)
    assert (snap.rm_step, snap.ra_step) == (0, 1)
    oi = _run("oi", FIG1_HEADS, [4, 4, 3, 4, 1])
    snap = dependent_snapshot(oi)
    assert (oi.t, oi.focus) == (5, 4)
    assert (snap.lm, snap.rm, snap.la, snap.ra) == (1, 6, 1, 5)
    assert (snap.lm_step, snap.rm_step, snap.la_step, snap.ra_step) == (0, 1, 0, 3)


def test_availability_figure1(fig1):
    assert availability_stats("l2r", [fig1]).all_per_sentence == 2
    assert availability_stats("r2l", [fig1]).all_per_sentence == 3
    av = availability_stats("oi", [fig1])
    assert (av.all_per_sentence, av.long_per_sentence) == (4, 0)
    with pytest.raises(ValueError):
        availability_stats("l2r", [])


@pytest.mark.parametrize("kind", KINDS)
def test_availability_both_sides_coincides(kind):
    # a dependent attached before its head's turn always lies on the exposed side
    rng = np.random.default_rng(3)
    tb = [make_sentence(random_tree(int(rng.integers(1, 25)), rng)) for _ in range(50)]
    assert availability_stats(kind, tb) == availability_stats(kind, tb, count_both_sides=True)


def _check_round_trip(kind, heads):
    state = ParserState.initial(kind, len(heads))
    seq = oracle_sequence(kind, heads)
    assert len(seq) == len(heads)
    proj = brute_projective(heads)
    for p in seq:
        assert p in legal_parents(state)
        if proj:
            assert p in legal_parents(state, projective_only=True)
        state = apply_attach(state, p, projective_only=proj)
    assert state.done and state.t == len(heads)
    assert state.head_array() == list(heads)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("n", range(1, 6))
def test_oracle_round_trip_exhaustive(kind, n):
    for heads in all_trees(n):
        _check_round_trip(kind, heads)


@pytest.mark.parametrize("kind", KINDS)
def test_oracle_round_trip_random(kind):
    rng = np.random.default_rng(7)
    for _ in range(200):
        _check_round_trip(kind, random_tree(int(rng.integers(1, 41)), rng))


def _brute_tracker(state, w):
    deps = [d for d in range(1, state.n + 1) if state.heads[d] == w]
    step = {x: t for t, x in enumerate(state.order)}
    left = [d for d in deps if d < w]
    right = [d for d in deps if d > w]
    return (
        min(left) if left else None,
        max(right) if right else None,
        max(left, key=lambda d: step[d]) if left else None,
        max(right, key=lambda d: step[d]) if right else None,
    )


@given(kind=st.sampled_from(KINDS), n=st.integers(1, 12), seed=st.integers(0, 2**32 - 1),
       proj=st.booleans())
@settings(max_examples=150, deadline=None)
def test_random_rollouts_sound(kind, n, seed, proj):
    """Random legal rollouts stay acyclic and the tracker matches a recount."""
    rng = np.random.default_rng(seed)
    state = ParserState.initial(kind, n)
    while not state.done:
        snap = dependent_snapshot(state)
        assert (snap.lm, snap.rm, snap.la, snap.ra) == _brute_tracker(state, state.focus)
        for w in range(1, n + 1):
            rec = state.tracker[w]
            vals = [rec.lm, rec.la, w, rec.ra, rec.rm]
            present = [v for v in vals if v is not None]
            assert present == sorted(present)
        legal = legal_parents(state, projective_only=proj)
        assert legal
        state = apply_attach(state, int(rng.choice(legal)), projective_only=proj)
        partial = [h if h >= 0 else 0 for h in state.heads[1:]]
        assert validate_heads(partial)
    assert validate_heads(state.head_array())
    if proj:
        assert is_projective(state.head_array())


def _brute_projective_parents(state):
    """Parents from which some projective completion of the built arcs exists."""
    n = state.n
    fixed = {d: state.heads[d] for d in range(1, n + 1) if state.heads[d] >= 0}
    focus = state.focus
    out = set()
    for heads in all_trees(n):
        if all(heads[d - 1] == h for d, h in fixed.items()) and brute_projective(heads):
            out.add(heads[focus - 1])
    return out


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("n", range(1, 5))
def test_projective_parents_exact(kind, n):
    """Exhaustive over every reachable partial state."""
    def walk(state):
        if state.done:
            return
        assert projective_parents(state) == _brute_projective_parents(state)
        for p in legal_parents(state):
            walk(apply_attach(state, p))

    walk(ParserState.initial(kind, n))


def test_single_root():
    state = apply_attach(ParserState.initial("l2r", 3), 0)
    assert 0 not in legal_parents(state, single_root=True)
    assert 0 in legal_parents(state)
