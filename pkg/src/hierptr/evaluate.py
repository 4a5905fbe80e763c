"""Attachment scores, punctuation policies and the length/position error analyses."""

from __future__ import annotations

import json
import random
import unicodedata
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from .treebank import Sentence

POLICIES = ("none", "upos-punct", "ptb-style")

DEFAULT_EDGES = (10, 20, 30, 40, 50)


class AlignmentError(ValueError):
    pass


def is_punct_form(form: str) -> bool:
    """True if every character of ``form`` is Unicode punctuation (category P*)."""
    return bool(form) and all(unicodedata.category(ch).startswith("P") for ch in form)


def is_scored(token, policy: str) -> bool:
    if policy == "none":
        return True
    if policy == "upos-punct":
        return token.upos != "PUNCT"
    if policy == "ptb-style":
        return not is_punct_form(token.form)
    raise ValueError(f"unknown punctuation policy {policy!r}; expected one of {POLICIES}")


@dataclass
class Bin:
    label: str
    count: int = 0
    heads: int = 0
    labeled: int = 0

    @property
    def uas(self) -> Optional[float]:
        return self.heads / self.count if self.count else None

    @property
    def las(self) -> Optional[float]:
        return self.labeled / self.count if self.count else None

    def as_dict(self) -> dict:
        return {"bin": self.label, "count": self.count, "uas": self.uas, "las": self.las}


@dataclass
class EvalReport:
    uas: float
    las: float
    scored: int
    correct_heads: int
    correct_labeled: int
    policy: str
    length_bins: list[Bin] = field(default_factory=list)
    position_bins: list[Bin] = field(default_factory=list)

    def as_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if not k.endswith("_bins")}
        d["length_bins"] = [b.as_dict() for b in self.length_bins]
        d["position_bins"] = [b.as_dict() for b in self.position_bins]
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def to_tsv(self) -> str:
        rows = ["metric\tvalue", f"uas\t{self.uas:.6f}", f"las\t{self.las:.6f}",
                f"scored\t{self.scored}", f"policy\t{self.policy}"]
        return "\n".join(rows) + "\n"

    def bins_tsv(self) -> str:
        rows = ["axis\tbin\tcount\tuas\tlas"]
        for axis, bins in (("length", self.length_bins), ("position", self.position_bins)):
            for b in bins:
                uas = "" if b.uas is None else f"{b.uas:.6f}"
                las = "" if b.las is None else f"{b.las:.6f}"
                rows.append(f"{axis}\t{b.label}\t{b.count}\t{uas}\t{las}")
        return "\n".join(rows) + "\n"


def _check_aligned(gold: Sequence[Sentence], pred: Sequence[Sentence]) -> None:
    if len(gold) != len(pred):
        raise AlignmentError(f"gold has {len(gold)} sentences, prediction has {len(pred)}")
    for k, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            name = g.id if g.id is not None else f"#{k + 1}"
            raise AlignmentError(f"sentence {name}: gold has {len(g)} tokens, prediction has {len(p)}")


def uas_las(gold: Sequence[Sentence], pred: Sequence[Sentence], policy: str = "none") -> EvalReport:
    _check_aligned(gold, pred)
    if policy not in POLICIES:
        raise ValueError(f"unknown punctuation policy {policy!r}; expected one of {POLICIES}")
    scored = heads = labeled = 0
    for g, p in zip(gold, pred):
        for gt, pt in zip(g.tokens, p.tokens):
            if not is_scored(gt, policy):
                continue
            scored += 1
            if gt.head == pt.head:
                heads += 1
                if gt.deprel == pt.deprel:
                    labeled += 1
    return EvalReport(
        uas=heads / scored if scored else 0.0,
        las=labeled / scored if scored else 0.0,
        scored=scored, correct_heads=heads, correct_labeled=labeled, policy=policy,
    )


def bin_labels(edges: Sequence[int] = DEFAULT_EDGES) -> list[str]:
    labels = []
    lo = 1
    for hi in edges:
        labels.append(f"{lo}-{hi}")
        lo = hi + 1
    labels.append(f">{edges[-1]}")
    return labels


def bin_index(value: int, edges: Sequence[int] = DEFAULT_EDGES) -> int:
    for k, hi in enumerate(edges):
        if value <= hi:
            return k
    return len(edges)


@dataclass
class BinnedAccuracy:
    length_bins: list[Bin]
    position_bins: list[Bin]


def binned_accuracy(gold: Sequence[Sentence], pred: Sequence[Sentence], edges: Sequence[int] = DEFAULT_EDGES,
                    policy: str = "none") -> BinnedAccuracy:
    """Accuracy per sentence-length bin and per word-position bin (1-based index)."""
    _check_aligned(gold, pred)
    labels = bin_labels(edges)
    by_len = [Bin(lab) for lab in labels]
    by_pos = [Bin(lab) for lab in labels]
    for g, p in zip(gold, pred):
        lb = by_len[bin_index(len(g), edges)]
        for gt, pt in zip(g.tokens, p.tokens):
            if not is_scored(gt, policy):
                continue
            pb = by_pos[bin_index(gt.index, edges)]
            head_ok = gt.head == pt.head
            lab_ok = head_ok and gt.deprel == pt.deprel
            for b in (lb, pb):
                b.count += 1
                b.heads += head_ok
                b.labeled += lab_ok
    return BinnedAccuracy(by_len, by_pos)


def evaluate(gold: Sequence[Sentence], pred: Sequence[Sentence], policy: str = "none",
             edges: Sequence[int] = DEFAULT_EDGES) -> EvalReport:
    report = uas_las(gold, pred, policy)
    bins = binned_accuracy(gold, pred, edges, policy)
    report.length_bins = bins.length_bins
    report.position_bins = bins.position_bins
    return report


def sample_tokens(treebank: Sequence[Sentence], budget: int, seed: int = 0) -> list[Sentence]:
    """Random whole sentences until the token count first reaches ``budget``.

    The selection keeps the treebank's original order.
    """
    if budget < 1:
        raise ValueError("token budget must be >= 1")
    order = list(range(len(treebank)))
    random.Random(seed).shuffle(order)
    chosen = []
    total = 0
    for k in order:
        if total >= budget:
            break
        chosen.append(k)
        total += len(treebank[k])
    return [treebank[k] for k in sorted(chosen)]


def plot_series(reports: dict[str, EvalReport]) -> dict:
    """Per-bin LAS series keyed by system name, for both analysis axes."""
    out: dict = {"length": {}, "position": {}}
    for name, rep in reports.items():
        out["length"][name] = [b.as_dict() for b in rep.length_bins]
        out["position"][name] = [b.as_dict() for b in rep.position_bins]
    return out
