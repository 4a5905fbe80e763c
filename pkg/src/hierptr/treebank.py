"""CoNLL-U reading/writing, tree validation and arc statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Optional, Sequence

ID, FORM, LEMMA, UPOS, XPOS, FEATS, HEAD, DEPREL, DEPS, MISC = range(10)

LONG_ARC = 4


class ConlluError(ValueError):
    """Malformed CoNLL-U input."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class Token:
    index: int
    form: str
    upos: str = "_"
    head: int = 0
    deprel: str = "_"
    lemma: Optional[str] = None
    xpos: Optional[str] = None
    feats: Optional[str] = None
    deps: Optional[str] = None
    misc: Optional[str] = None

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"token index must be >= 1, got {self.index}")
        if self.head < 0:
            raise ValueError(f"head must be >= 0, got {self.head}")
        if self.head == self.index:
            raise ValueError(f"token {self.index} is its own head")


@dataclass
class Sentence:
    tokens: list[Token]
    id: Optional[str] = None
    comments: list[str] = field(default_factory=list)
    # multiword ranges / empty nodes, as (number of regular tokens preceding, raw line)
    extra_lines: list[tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.tokens)
        for k, tok in enumerate(self.tokens, start=1):
            if tok.index != k:
                raise ValueError(f"token indices must be 1..{n} without gaps (got {tok.index} at {k})")
            if tok.head > n:
                raise ValueError(f"head {tok.head} of token {k} out of range [0, {n}]")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def heads(self) -> list[int]:
        return [t.head for t in self.tokens]

    @property
    def labels(self) -> list[str]:
        return [t.deprel for t in self.tokens]

    @property
    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]

    @property
    def upos(self) -> list[str]:
        return [t.upos for t in self.tokens]

    def tree(self) -> "DepTree":
        return DepTree(tuple(self.heads), tuple(self.labels))

    def with_tree(self, heads: Sequence[int], labels: Optional[Sequence[str]] = None) -> "Sentence":
        """Copy of the sentence with its head (and optionally label) columns replaced."""
        if len(heads) != len(self.tokens):
            raise ValueError("head array length does not match sentence length")
        labels = self.labels if labels is None else labels
        toks = [
            Token(t.index, t.form, t.upos, int(h), str(lab), t.lemma, t.xpos, t.feats, t.deps, t.misc)
            for t, h, lab in zip(self.tokens, heads, labels)
        ]
        return Sentence(toks, self.id, list(self.comments), list(self.extra_lines))


@dataclass(frozen=True)
class DepTree:
    heads: tuple[int, ...]
    labels: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.heads)


@dataclass(frozen=True)
class TreeValidation:
    valid: bool
    kind: Optional[str] = None  # "range", "cycle" or "unreachable"
    nodes: tuple[int, ...] = ()

    def __bool__(self) -> bool:
        return self.valid


@dataclass(frozen=True)
class TreebankStats:
    sentence_count: int
    token_count: int
    arc_count: int
    long_arc_count: int
    pct_long_arcs: float
    pct_left_of_long: Optional[float]


def _opt(value: str) -> Optional[str]:
    return None if value == "_" else value


def _parse_token(cols: list[str], lineno: int) -> Token:
    try:
        index = int(cols[ID])
    except ValueError:
        raise ConlluError(lineno, f"non-integer token id {cols[ID]!r}") from None
    try:
        head = int(cols[HEAD])
    except ValueError:
        raise ConlluError(lineno, f"non-integer head {cols[HEAD]!r}") from None
    try:
        return Token(
            index=index,
            form=cols[FORM],
            upos=cols[UPOS],
            head=head,
            deprel=cols[DEPREL],
            lemma=_opt(cols[LEMMA]),
            xpos=_opt(cols[XPOS]),
            feats=_opt(cols[FEATS]),
            deps=_opt(cols[DEPS]),
            misc=_opt(cols[MISC]),
        )
    except ValueError as e:
        raise ConlluError(lineno, str(e)) from None


def parse_conllu(text: str) -> list[Sentence]:
    """Parse CoNLL-U text into sentences.

    Multiword-token ranges (``1-2``) and empty nodes (``1.1``) are not part of
    the token sequence; they are kept verbatim in ``Sentence.extra_lines`` so
    that :func:`write_conllu` reproduces them.
    """
    sentences: list[Sentence] = []
    tokens: list[Token] = []
    comments: list[str] = []
    extras: list[tuple[int, str]] = []
    head_lines: list[int] = []
    first_line = 0

    def flush():
        nonlocal tokens, comments, extras, head_lines
        if tokens:
            n = len(tokens)
            for k, tok in enumerate(tokens, start=1):
                if tok.index != k:
                    raise ConlluError(head_lines[k - 1], f"expected token id {k}, got {tok.index}")
                if tok.head > n:
                    raise ConlluError(head_lines[k - 1], f"head {tok.head} out of range [0, {n}]")
            sent_id = None
            for c in comments:
                body = c[1:].strip()
                if body.startswith("sent_id"):
                    sent_id = body.split("=", 1)[-1].strip() if "=" in body else body[7:].strip()
                    break
            sentences.append(Sentence(tokens, sent_id, comments, extras))
        elif comments or extras:
            raise ConlluError(first_line, "sentence block without tokens")
        tokens, comments, extras, head_lines = [], [], [], []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            flush()
            continue
        if not tokens and not comments and not extras:
            first_line = lineno
        if line.startswith("#"):
            comments.append(line)
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConlluError(lineno, f"expected 10 tab-separated columns, got {len(cols)}")
        if "-" in cols[ID] or "." in cols[ID]:
            extras.append((len(tokens), line))
            continue
        tokens.append(_parse_token(cols, lineno))
        head_lines.append(lineno)
    flush()
    return sentences


def _col(value: Optional[str]) -> str:
    return "_" if value is None or value == "" else value


def write_conllu(sentences: Iterable[Sentence]) -> str:
    blocks = []
    for sent in sentences:
        lines = list(sent.comments)
        if sent.id is not None and not any(c[1:].strip().startswith("sent_id") for c in sent.comments):
            lines.append(f"# sent_id = {sent.id}")
        extras = sorted(sent.extra_lines, key=lambda e: e[0])
        e = 0
        for k, tok in enumerate(sent.tokens):
            while e < len(extras) and extras[e][0] <= k:
                lines.append(extras[e][1])
                e += 1
            lines.append("\t".join([
                str(tok.index), tok.form, _col(tok.lemma), _col(tok.upos), _col(tok.xpos),
                _col(tok.feats), str(tok.head), _col(tok.deprel), _col(tok.deps), _col(tok.misc),
            ]))
        lines.extend(x[1] for x in extras[e:])
        blocks.append("\n".join(lines) + "\n\n")
    return "".join(blocks)


def read_conllu(path) -> list[Sentence]:
    with open(path, encoding="utf-8") as f:
        return parse_conllu(f.read())


def validate_heads(heads: Sequence[int]) -> TreeValidation:
    """Check single-head, acyclic, rooted-at-0 for a 1-based head array."""
    n = len(heads)
    for i, h in enumerate(heads, start=1):
        if not 0 <= h <= n or h == i:
            return TreeValidation(False, "range", (i,))
    # 0 = unvisited, 1 = on current path, 2 = known to reach root
    state = [0] * (n + 1)
    state[0] = 2
    for start in range(1, n + 1):
        path = []
        node = start
        while state[node] == 0:
            state[node] = 1
            path.append(node)
            node = heads[node - 1]
        if state[node] == 1:
            cycle = path[path.index(node):]
            return TreeValidation(False, "cycle", tuple(sorted(cycle)))
        for p in path:
            state[p] = 2
    return TreeValidation(True)


def validate_tree(sentence: Sentence | DepTree | Sequence[int]) -> TreeValidation:
    if isinstance(sentence, Sentence):
        heads = sentence.heads
    elif isinstance(sentence, DepTree):
        heads = sentence.heads
    else:
        heads = sentence
    return validate_heads(list(heads))


def arcs_of(heads: Sequence[int]) -> list[tuple[int, int]]:
    """Arcs as normalized (left, right) spans, root arc included as (0, dep)."""
    return [(min(h, d), max(h, d)) for d, h in enumerate(heads, start=1)]


def spans_cross(a: tuple[int, int], b: tuple[int, int]) -> bool:
    (l1, r1), (l2, r2) = a, b
    return l1 < l2 < r1 < r2 or l2 < l1 < r2 < r1


def is_projective(tree: DepTree | Sentence | Sequence[int]) -> bool:
    heads = tree.heads if isinstance(tree, (DepTree, Sentence)) else tree
    spans = sorted(arcs_of(heads), key=lambda s: (s[0], -s[1]))
    # sweep: arcs sorted by left end; a stack of open right ends must stay nested
    open_rights: list[int] = []
    for left, right in spans:
        while open_rights and open_rights[-1] <= left:
            open_rights.pop()
        if open_rights and right > open_rights[-1]:
            return False
        open_rights.append(right)
    return True


def crossing_pairs(heads: Sequence[int]) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    return [(a, b) for a, b in combinations(arcs_of(heads), 2) if spans_cross(a, b)]


def arc_stats(treebank: Sequence[Sentence], exclude_root_arcs: bool = False) -> TreebankStats:
    """Fraction of long arcs (length > 4) and the leftward share among them.

    A leftward arc has its head to the right of the dependent. Root arcs count
    with length equal to the dependent's position unless excluded.
    """
    if not treebank:
        raise ValueError("arc statistics need a non-empty treebank")
    arcs = longs = left_longs = tokens = 0
    for sent in treebank:
        tokens += len(sent)
        for d, h in enumerate(sent.heads, start=1):
            if h == 0 and exclude_root_arcs:
                continue
            arcs += 1
            if abs(h - d) > LONG_ARC:
                longs += 1
                if h > d:
                    left_longs += 1
    return TreebankStats(
        sentence_count=len(treebank),
        token_count=tokens,
        arc_count=arcs,
        long_arc_count=longs,
        pct_long_arcs=longs / arcs if arcs else 0.0,
        pct_left_of_long=left_longs / longs if longs else None,
    )
