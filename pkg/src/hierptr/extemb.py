"""Per-token external embedding files.

Each sentence starts with a header ``# <sent_id> <dim> <n>`` followed by ``n``
lines of ``dim`` whitespace-separated numbers, one line per token.
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np

from .treebank import Sentence


class ExternalEmbeddingError(ValueError):
    pass


def parse_external(text: str) -> list[tuple[str, np.ndarray]]:
    lines = text.splitlines()
    out = []
    k = 0
    while k < len(lines):
        line = lines[k].strip()
        k += 1
        if not line:
            continue
        parts = line.split()
        if parts[0] != "#" or len(parts) != 4:
            raise ExternalEmbeddingError(f"line {k}: expected '# sent_id dim n' header, got {line[:40]!r}")
        sid = parts[1]
        try:
            dim, n = int(parts[2]), int(parts[3])
        except ValueError:
            raise ExternalEmbeddingError(f"line {k}: dim and n must be integers") from None
        if dim < 1 or n < 1:
            raise ExternalEmbeddingError(f"line {k}: dim and n must be positive")
        rows = []
        for _ in range(n):
            if k >= len(lines):
                raise ExternalEmbeddingError(f"sentence {sid}: expected {n} vectors, file ended after {len(rows)}")
            vals = lines[k].split()
            k += 1
            if len(vals) != dim:
                raise ExternalEmbeddingError(f"line {k}: expected {dim} values, got {len(vals)}")
            try:
                rows.append([float(v) for v in vals])
            except ValueError:
                raise ExternalEmbeddingError(f"line {k}: non-numeric value") from None
        arr = np.asarray(rows, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise ExternalEmbeddingError(f"sentence {sid}: non-finite value")
        out.append((sid, arr))
    return out


def read_external(path) -> list[tuple[str, np.ndarray]]:
    with open(path, encoding="utf-8") as fh:
        return parse_external(fh.read())


def format_external(entries: Iterable[tuple[str, np.ndarray]]) -> str:
    parts = []
    for sid, arr in entries:
        parts.append(f"# {sid} {arr.shape[1]} {arr.shape[0]}")
        parts.extend(" ".join(repr(float(v)) for v in row) for row in arr)
    return "\n".join(parts) + "\n"


def align_external(sentences: Sequence[Sentence], entries: Sequence[tuple[str, np.ndarray]],
                   dim: Optional[int] = None) -> list[np.ndarray]:
    """Match vectors to sentences in order, checking ids (when present) and token counts."""
    if len(entries) != len(sentences):
        raise ExternalEmbeddingError(f"{len(entries)} embedding blocks for {len(sentences)} sentences")
    out = []
    for k, (sent, (sid, arr)) in enumerate(zip(sentences, entries)):
        if sent.id is not None and sid != sent.id:
            raise ExternalEmbeddingError(f"block {k + 1}: sent_id {sid!r} does not match sentence {sent.id!r}")
        if arr.shape[0] != len(sent):
            raise ExternalEmbeddingError(f"sentence {sid}: {arr.shape[0]} vectors for {len(sent)} tokens")
        if dim is not None and arr.shape[1] != dim:
            raise ExternalEmbeddingError(f"sentence {sid}: dim {arr.shape[1]}, model expects {dim}")
        out.append(arr)
    return out
