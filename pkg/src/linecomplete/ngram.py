"""Markov n-gram baseline over subtoken ids with relative-frequency estimates.

Counts come from rolling windows of size n, stride one, never spanning file
boundaries. Plain relative frequency is undefined on unseen contexts, so two
query modes exist: `strict` falls back to a uniform distribution, `backoff`
applies stupid backoff through the (n-1)-gram down to the unigram with a 0.4
factor per level (backed-off vectors are scores, not renormalized).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BACKOFF_FACTOR = 0.4

STRICT = "strict"
BACKOFF = "backoff"


@dataclass
class NGramModel:
    n: int
    vocab_size: int
    # order -> context tuple (order-1 ids) -> next-id counts
    orders: dict[int, dict[tuple[int, ...], Counter]] = field(default_factory=dict)
    context_totals: dict[int, dict[tuple[int, ...], int]] = field(default_factory=dict)
    skipped_sequences: int = 0

    @property
    def counts(self) -> dict[tuple[int, ...], Counter]:
        """Top-order count table (contexts of n-1 ids)."""
        return self.orders[self.n]

    def stored_orders(self) -> list[int]:
        return sorted(self.orders)


def _backoff_orders(n: int) -> list[int]:
    # Top order, one step down, and the unigram floor.
    return sorted({n, max(n - 1, 1), 1}, reverse=True)


def train_ngram(
    sequences: Iterable[Sequence[int]],
    n: int,
    vocab_size: int,
) -> NGramModel:
    """Count rolling windows per file; files shorter than n are skipped."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    model = NGramModel(n=n, vocab_size=vocab_size)
    for order in _backoff_orders(n):
        model.orders[order] = {}
        model.context_totals[order] = {}

    for seq in sequences:
        ids = list(seq)
        if len(ids) < n:
            model.skipped_sequences += 1
            continue
        for order in model.stored_orders():
            table = model.orders[order]
            totals = model.context_totals[order]
            for start in range(len(ids) - order + 1):
                context = tuple(ids[start : start + order - 1])
                nxt = ids[start + order - 1]
                bucket = table.get(context)
                if bucket is None:
                    bucket = Counter()
                    table[context] = bucket
                bucket[nxt] += 1
                totals[context] = totals.get(context, 0) + 1
    return model


def _relative_frequencies(model: NGramModel, order: int, context: tuple[int, ...]) -> np.ndarray | None:
    bucket = model.orders[order].get(context)
    if bucket is None:
        return None
    vec = np.zeros(model.vocab_size, dtype=np.float64)
    total = model.context_totals[order][context]
    for token_id, count in bucket.items():
        vec[token_id] = count / total
    return vec


def next_distribution(
    model: NGramModel,
    context: Sequence[int],
    mode: str = BACKOFF,
) -> np.ndarray:
    """Probability vector over the vocabulary given the last n-1 context ids.

    Seen contexts return exact relative frequencies (sum to 1). Unseen
    contexts return uniform in strict mode, or 0.4-per-level stupid-backoff
    scores otherwise.
    """
    if mode not in (STRICT, BACKOFF):
        raise ValueError(f"unknown mode {mode!r}")
    ctx = tuple(context[-(model.n - 1):]) if model.n > 1 else ()
    vec = _relative_frequencies(model, model.n, ctx)
    if vec is not None:
        return vec
    if mode == STRICT:
        return np.full(model.vocab_size, 1.0 / model.vocab_size, dtype=np.float64)
    factor = BACKOFF_FACTOR
    for order in _backoff_orders(model.n)[1:]:
        sub_ctx = ctx[-(order - 1):] if order > 1 else ()
        vec = _relative_frequencies(model, order, sub_ctx)
        if vec is not None:
            return factor * vec
        factor *= BACKOFF_FACTOR
    # Nothing stored at all (untrained model): uniform floor.
    return np.full(model.vocab_size, 1.0 / model.vocab_size, dtype=np.float64)


def complete_ngram(
    model: NGramModel,
    context: Sequence[int],
    max_len: int,
    break_ids: frozenset[int] | set[int],
    mode: str = BACKOFF,
) -> list[int]:
    """Greedy argmax rollout (ties -> lowest id) until a break id or max_len.

    Break ids terminate the rollout and are not part of the completion; an
    immediate break argmax yields an empty completion.
    """
    out: list[int] = []
    ids = list(context)
    for _ in range(max_len):
        dist = next_distribution(model, ids, mode=mode)
        nxt = int(np.argmax(dist))  # argmax returns the lowest index on ties
        if nxt in break_ids:
            break
        out.append(nxt)
        ids.append(nxt)
    return out


def write_ngram(model: NGramModel, path: str | Path) -> None:
    """Persist as header plus `context-ids(comma-sep) \\t next-id \\t count`."""
    lines = [f"ngram-model v1 n={model.n} vocab={model.vocab_size}"]
    for order in model.stored_orders():
        for context in sorted(model.orders[order]):
            bucket = model.orders[order][context]
            ctx_text = ",".join(str(i) for i in context)
            for nxt in sorted(bucket):
                lines.append(f"{ctx_text}\t{nxt}\t{bucket[nxt]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_ngram(path: str | Path) -> NGramModel:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if not lines or not lines[0].startswith("ngram-model v1 "):
        raise ValueError(f"not an ngram-model v1 file: {path}")
    header = dict(part.split("=") for part in lines[0].split()[2:])
    model = NGramModel(n=int(header["n"]), vocab_size=int(header["vocab"]))
    for order in _backoff_orders(model.n):
        model.orders[order] = {}
        model.context_totals[order] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        ctx_text, nxt_text, count_text = line.split("\t")
        context = tuple(int(i) for i in ctx_text.split(",")) if ctx_text else ()
        order = len(context) + 1
        table = model.orders.setdefault(order, {})
        totals = model.context_totals.setdefault(order, {})
        bucket = table.setdefault(context, Counter())
        bucket[int(nxt_text)] += int(count_text)
        totals[context] = totals.get(context, 0) + int(count_text)
    return model
