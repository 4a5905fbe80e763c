"""Shift-Attach-p transition systems: left-to-right, right-to-left and outside-in.

Every system attaches exactly one word per step, so a sentence of length n is
parsed in n steps. The systems differ only in the order in which words become
the focus. Positions are 1-based; 0 is the artificial root.
"""

from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .treebank import LONG_ARC, DepTree, Sentence, spans_cross, validate_heads


class TransitionError(ValueError):
    pass


class System(str, enum.Enum):
    L2R = "l2r"
    R2L = "r2l"
    OI = "oi"

    @classmethod
    def parse(cls, value: "System | str") -> "System":
        if isinstance(value, System):
            return value
        try:
            return cls(value.lower().replace("-", ""))
        except ValueError:
            raise TransitionError(f"unknown transition system {value!r} (expected l2r, r2l or oi)") from None


def focus_order(kind: System | str, n: int) -> list[int]:
    kind = System.parse(kind)
    if n < 1:
        raise TransitionError("sentence length must be >= 1")
    if kind is System.L2R:
        return list(range(1, n + 1))
    if kind is System.R2L:
        return list(range(n, 0, -1))
    order = []
    lo, hi = 1, n
    while lo <= hi:
        order.append(lo)
        lo += 1
        if lo <= hi:
            order.append(hi)
            hi -= 1
    return order


@dataclass
class DepRecord:
    """Dependents attached so far to one word, with the step that attached each."""

    lm: Optional[int] = None
    rm: Optional[int] = None
    la: Optional[int] = None
    ra: Optional[int] = None
    lm_step: Optional[int] = None
    rm_step: Optional[int] = None
    la_step: Optional[int] = None
    ra_step: Optional[int] = None


@dataclass(frozen=True)
class Snapshot:
    lm: Optional[int] = None
    rm: Optional[int] = None
    la: Optional[int] = None
    ra: Optional[int] = None
    lm_step: Optional[int] = None
    rm_step: Optional[int] = None
    la_step: Optional[int] = None
    ra_step: Optional[int] = None

    def step_of(self, slot: str) -> Optional[int]:
        return getattr(self, f"{slot}_step")


@dataclass
class ParserState:
    n: int
    kind: System
    order: list[int]
    t: int = 0
    heads: list[int] = field(default_factory=list)  # index 0 unused, -1 = unattached
    tracker: list[DepRecord] = field(default_factory=list)
    root_children: int = 0

    @classmethod
    def initial(cls, kind: System | str, n: int) -> "ParserState":
        kind = System.parse(kind)
        return cls(
            n=n,
            kind=kind,
            order=focus_order(kind, n),
            heads=[-1] * (n + 1),
            tracker=[DepRecord() for _ in range(n + 1)],
        )

    @property
    def done(self) -> bool:
        return self.t >= self.n

    @property
    def focus(self) -> int:
        if self.done:
            raise TransitionError("parse finished; no focus word")
        return self.order[self.t]

    def head_array(self) -> list[int]:
        return self.heads[1:]

    def copy(self) -> "ParserState":
        return ParserState(
            self.n, self.kind, self.order, self.t, list(self.heads),
            [copy.copy(r) for r in self.tracker], self.root_children,
        )

    def built_spans(self) -> list[tuple[int, int]]:
        return [(min(h, d), max(h, d)) for d, h in enumerate(self.heads) if d > 0 and h >= 0]


def _reaches(heads: list[int], start: int, target: int) -> bool:
    """True if following attached heads upward from ``start`` hits ``target``."""
    node = start
    while node > 0:
        if node == target:
            return True
        node = heads[node]
    return False


def projective_parents(state: ParserState) -> set[int]:
    """Parents p for the focus such that some projective tree contains p -> focus
    together with every arc built so far.

    Boolean inside/outside pass over the first-order projective chart with the
    attached words' heads forced. Rows/columns of the chart are kept as int
    bitmasks so each cell is O(1) big-int work.
    """
    n = state.n
    heads = state.heads
    focus = state.focus

    def allowed(h: int, d: int) -> bool:
        return d > 0 and h != d and (heads[d] < 0 or heads[d] == h)

    def span(lo: int, hi: int) -> int:
        return ((1 << (hi - lo + 1)) - 1) << lo if hi >= lo else 0

    size = n + 1
    row_cr = [1 << s for s in range(size)]
    col_cr = [1 << s for s in range(size)]
    row_cl = [1 << s for s in range(size)]
    col_cl = [1 << s for s in range(size)]
    row_il = [0] * size
    col_il = [0] * size
    row_ir = [0] * size
    col_ir = [0] * size
    for w in range(1, size):
        for s in range(0, size - w):
            t = s + w
            if row_cr[s] & (col_cl[t] >> 1) & span(s, t - 1):
                if allowed(t, s):
                    row_il[s] |= 1 << t
                    col_il[t] |= 1 << s
                if allowed(s, t):
                    row_ir[s] |= 1 << t
                    col_ir[t] |= 1 << s
            if row_cl[s] & col_il[t] & span(s, t - 1):
                row_cl[s] |= 1 << t
                col_cl[t] |= 1 << s
            if row_ir[s] & col_cr[t] & span(s + 1, t):
                row_cr[s] |= 1 << t
                col_cr[t] |= 1 << s
    if not row_cr[0] >> n & 1:
        return set()

    row_ocr = [0] * size
    col_ocr = [0] * size
    row_ocl = [0] * size
    col_ocl = [0] * size
    row_q = [0] * size
    col_q = [0] * size
    o_il = set()
    o_ir = set()
    row_ocr[0] |= 1 << n
    col_ocr[n] |= 1
    for w in range(n, 0, -1):
        for s in range(0, size - w):
            t = s + w
            bit_t, bit_s = 1 << t, 1 << s
            if not row_ocr[s] & bit_t and (
                col_ocr[t] & col_ir[s] & span(0, s - 1)
                or (t < n and row_q[s] & row_cl[t + 1] & span(t + 1, n))
            ):
                row_ocr[s] |= bit_t
                col_ocr[t] |= bit_s
            if not row_ocl[s] & bit_t and (
                row_ocl[s] & row_il[t] & span(t + 1, n)
                or (s > 0 and col_q[t] & col_cr[s - 1] & span(0, s - 1))
            ):
                row_ocl[s] |= bit_t
                col_ocl[t] |= bit_s
            q = False
            if col_ocl[t] & col_cl[s] & span(0, s):
                o_il.add((s, t))
                q = q or allowed(t, s)
            if row_ocr[s] & row_cr[t] & span(t, n):
                o_ir.add((s, t))
                q = q or allowed(s, t)
            if q:
                row_q[s] |= bit_t
                col_q[t] |= bit_s

    out = set()
    for p in range(size):
        if p == focus or not allowed(p, focus):
            continue
        if p < focus:
            ok = row_ir[p] >> focus & 1 and (p, focus) in o_ir
        else:
            ok = row_il[focus] >> p & 1 and (focus, p) in o_il
        if ok:
            out.add(p)
    return out


def legal_parents(state: ParserState, projective_only: bool = False, single_root: bool = False) -> list[int]:
    """Sorted parents p for the focus word such that the arc p -> focus is allowed.

    Acyclicity is always enforced. ``projective_only`` keeps only parents from
    which a projective tree is still reachable; when the built arcs already rule
    out every projective completion, the acyclic set is returned unchanged.
    ``single_root`` drops position 0 once some word hangs from the root.
    """
    if state.done:
        raise TransitionError("parse finished; no legal parents")
    focus = state.focus
    heads = state.heads
    legal = [p for p in range(state.n + 1) if p != focus and not _reaches(heads, p, focus)]
    if projective_only:
        proj = projective_parents(state)
        if proj:
            legal = [p for p in legal if p in proj]
    if single_root and state.root_children > 0 and len(legal) > 1:
        legal = [p for p in legal if p != 0]
    return legal


def violation(state: ParserState, p: int, projective_only: bool = False, single_root: bool = False) -> Optional[str]:
    """Name of the constraint that forbids attaching the focus to ``p``, if any."""
    focus = state.focus
    if not 0 <= p <= state.n:
        return f"parent {p} out of range [0, {state.n}]"
    if p == focus:
        return "self-attachment"
    if _reaches(state.heads, p, focus):
        return f"cycle: {p} is a descendant of focus {focus}"
    if p not in legal_parents(state, projective_only, single_root):
        return "projectivity" if projective_only else "single root"
    return None


def apply_attach(state: ParserState, p: int, projective_only: bool = False,
                 single_root: bool = False, check: bool = True) -> ParserState:
    """Attach the focus word to ``p`` and advance; returns a new state."""
    if state.done:
        raise TransitionError("parse finished; cannot attach")
    if check:
        why = violation(state, p, projective_only, single_root)
        if why is not None:
            raise TransitionError(f"illegal attachment {p} -> {state.focus}: {why}")
    new = state.copy()
    advance(new, p)
    return new


def advance(state: ParserState, p: int) -> None:
    """In-place, unchecked version of :func:`apply_attach`."""
    focus = state.order[state.t]
    state.heads[focus] = p
    if p == 0:
        state.root_children += 1
    else:
        rec = state.tracker[p]
        if focus < p:
            rec.la, rec.la_step = focus, state.t
            if rec.lm is None or focus < rec.lm:
                rec.lm, rec.lm_step = focus, state.t
        else:
            rec.ra, rec.ra_step = focus, state.t
            if rec.rm is None or focus > rec.rm:
                rec.rm, rec.rm_step = focus, state.t
    state.t += 1


def dependent_snapshot(state: ParserState) -> Snapshot:
    rec = state.tracker[state.focus]
    return Snapshot(rec.lm, rec.rm, rec.la, rec.ra, rec.lm_step, rec.rm_step, rec.la_step, rec.ra_step)


def oracle_sequence(kind: System | str, gold: DepTree | Sentence | Sequence[int]) -> list[int]:
    heads = list(gold.heads) if isinstance(gold, (DepTree, Sentence)) else list(gold)
    check = validate_heads(heads)
    if not check:
        raise TransitionError(f"invalid gold tree ({check.kind} at {list(check.nodes)})")
    return [heads[i - 1] for i in focus_order(kind, len(heads))]


def run_oracle(kind: System | str, gold: DepTree | Sentence | Sequence[int],
               projective_only: bool = False) -> ParserState:
    """Execute the oracle sequence with legality checks and return the final state."""
    heads = list(gold.heads) if isinstance(gold, (DepTree, Sentence)) else list(gold)
    state = ParserState.initial(kind, len(heads))
    for p in oracle_sequence(kind, heads):
        state = apply_attach(state, p, projective_only=projective_only)
    return state


@dataclass(frozen=True)
class Availability:
    all_per_sentence: float
    long_per_sentence: float


def _exposed(kind: System, dep: int, head: int) -> bool:
    if kind is System.L2R:
        return dep < head
    if kind is System.R2L:
        return dep > head
    return True


def availability_stats(kind: System | str, treebank: Sequence[Sentence],
                       count_both_sides: bool = False) -> Availability:
    """Mean number of gold dependents already attached when their head becomes focus."""
    kind = System.parse(kind)
    if not treebank:
        raise ValueError("availability statistics need a non-empty treebank")
    total_all = total_long = 0
    for sent in treebank:
        heads = sent.heads
        step = {w: t for t, w in enumerate(focus_order(kind, len(heads)))}
        for d, h in enumerate(heads, start=1):
            if h == 0 or step[d] >= step[h]:
                continue
            if not count_both_sides and not _exposed(kind, d, h):
                continue
            total_all += 1
            if abs(h - d) > LONG_ARC:
                total_long += 1
    return Availability(total_all / len(treebank), total_long / len(treebank))
