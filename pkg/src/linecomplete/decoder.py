"""Beam-search decoding over any sequence model, with batched expansion,
per-hypothesis KV-cache reuse, break tokens and inference-call accounting.

Three execution modes produce identical results but differ in how many model
invocations they make for a length-L, width-k search:

  sequential       one call per active hypothesis per step (up to L*k)
  parallel         one batched call per step (at most L)
  parallel+cached  one prefill plus one single-token batched call per step,
                   reusing attention keys/values (at most L)

Scores are cumulative natural-log probabilities, no length normalization.
Ties break by lexicographic id order. Finished hypotheses retire into a pool
and compete with the active beam for the final top-k.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
import torch

from .model import ContextOverflowError, TransformerLM
from . import ngram as ngram_mod

SEQUENTIAL = "sequential"
PARALLEL = "parallel"
PARALLEL_CACHED = "parallel+cached"
MODES = (SEQUENTIAL, PARALLEL, PARALLEL_CACHED)

_NEG_INF = float("-inf")


class DecodeError(Exception):
    pass


class DecodeMismatchError(DecodeError):
    """Mode-equivalence check failed; carries the first diverging position."""

    def __init__(self, message: str, rank: int, step: int):
        super().__init__(message)
        self.rank = rank
        self.step = step


class SequenceModel(ABC):
    """Adapter interface the decoder drives.

    `next_log_prob_rows` is the single batched inference primitive; the
    default cache hooks re-feed full prefixes so every model supports all
    three modes. Models with a real KV cache override the hooks.
    """

    vocab_size: int
    max_context: int | None = None

    @abstractmethod
    def next_log_prob_rows(self, contexts: Sequence[Sequence[int]]) -> np.ndarray:
        """(batch, |V|) natural-log next-token probabilities; one model call."""

    def prefill(self, context: Sequence[int]) -> tuple[np.ndarray, Any]:
        rows = self.next_log_prob_rows([context])
        return rows[0], [list(context)]

    def extend(self, cache: Any, new_ids: Sequence[int]) -> tuple[np.ndarray, Any]:
        prefixes = [prefix + [t] for prefix, t in zip(cache, new_ids)]
        return self.next_log_prob_rows(prefixes), prefixes

    def select_cache(self, cache: Any, indices: Sequence[int]) -> Any:
        return [list(cache[i]) for i in indices]

    def sequence_log_probs(self, ids: Sequence[int]) -> np.ndarray:
        """log P(ids[t] | ids[:t]) for t = 1..len-1."""
        ids = list(ids)
        out = np.empty(len(ids) - 1, dtype=np.float64)
        for t in range(1, len(ids)):
            row = self.next_log_prob_rows([ids[:t]])[0]
            out[t - 1] = row[ids[t]]
        return out


class TransformerAdapter(SequenceModel):
    """Drives a TransformerLM; overrides the cache hooks with real KV reuse.

    `valid_vocab` restricts decoding to the tokenizer's id range when the
    model was sized at a larger configured vocabulary (probability mass
    renormalizes over the usable alphabet).
    """

    def __init__(self, lm: TransformerLM, lang: int | None = None,
                 valid_vocab: int | None = None):
        self.lm = lm
        self.lang = lang
        self.vocab_size = lm.config.vocab_size
        self.max_context = lm.config.n_ctx
        self.valid_vocab = valid_vocab

    def _log_rows(self, logits: torch.Tensor) -> np.ndarray:
        logits = logits.to(torch.float64)
        if self.valid_vocab is not None and self.valid_vocab < logits.shape[-1]:
            logits[..., self.valid_vocab:] = float("-inf")
        return torch.log_softmax(logits, dim=-1).numpy()

    def next_log_prob_rows(self, contexts: Sequence[Sequence[int]]) -> np.ndarray:
        self.lm.eval()
        lengths = {len(c) for c in contexts}
        if len(lengths) != 1:
            raise DecodeError("batched contexts must share a length")
        with torch.no_grad():
            ids = torch.as_tensor([list(c) for c in contexts], dtype=torch.long)
            logits, _ = self.lm.forward(ids, lang=self.lang)
            return self._log_rows(logits[:, -1])

    def prefill(self, context: Sequence[int]) -> tuple[np.ndarray, Any]:
        self.lm.eval()
        with torch.no_grad():
            ids = torch.as_tensor([list(context)], dtype=torch.long)
            logits, cache = self.lm.forward(ids, lang=self.lang)
            return self._log_rows(logits[:, -1])[0], cache

    def extend(self, cache: Any, new_ids: Sequence[int]) -> tuple[np.ndarray, Any]:
        self.lm.eval()
        with torch.no_grad():
            ids = torch.as_tensor([[t] for t in new_ids], dtype=torch.long)
            logits, cache = self.lm.forward(ids, lang=self.lang, cache=cache)
            return self._log_rows(logits[:, -1]), cache

    def select_cache(self, cache: Any, indices: Sequence[int]) -> Any:
        return cache.select(indices)

    def sequence_log_probs(self, ids: Sequence[int]) -> np.ndarray:
        """Every position after the first is scored once; sequences longer
        than the context window are split into chunks overlapping by one
        token so chunk-initial targets still get a (truncated) context."""
        self.lm.eval()
        ids = list(ids)
        n_ctx = self.lm.config.n_ctx
        out: list[np.ndarray] = []
        start = 0
        with torch.no_grad():
            while start < len(ids) - 1:
                chunk = ids[start : start + n_ctx]
                tensor = torch.as_tensor(chunk, dtype=torch.long)
                logits, _ = self.lm.forward(tensor, lang=self.lang)
                log_probs = torch.from_numpy(self._log_rows(logits))
                targets = tensor[1:]
                out.append(
                    log_probs[:-1].gather(1, targets.unsqueeze(1)).squeeze(1).numpy()
                )
                start += n_ctx - 1
        return np.concatenate(out) if out else np.empty(0, dtype=np.float64)


class NGramAdapter(SequenceModel):
    def __init__(self, model: ngram_mod.NGramModel, mode: str = ngram_mod.BACKOFF):
        self.model = model
        self.mode = mode
        self.vocab_size = model.vocab_size

    def next_log_prob_rows(self, contexts: Sequence[Sequence[int]]) -> np.ndarray:
        rows = np.empty((len(contexts), self.vocab_size), dtype=np.float64)
        for i, context in enumerate(contexts):
            dist = ngram_mod.next_distribution(self.model, context, mode=self.mode)
            with np.errstate(divide="ignore"):
                rows[i] = np.log(dist)
        return rows


class MarkovTableModel(SequenceModel):
    """Seeded first-order conditional table; a reference model for decoder
    benchmarks and equivalence checks that needs no training."""

    def __init__(self, vocab_size: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        raw = rng.random((vocab_size, vocab_size)) + 1e-3
        table = raw / raw.sum(axis=1, keepdims=True)
        self.log_table = np.log(table)
        self.vocab_size = vocab_size

    def next_log_prob_rows(self, contexts: Sequence[Sequence[int]]) -> np.ndarray:
        return np.stack([self.log_table[context[-1]] for context in contexts])


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple[int, ...]
    log_prob: float
    per_step_log_probs: tuple[float, ...]
    finished: bool
    cache_handle: int | None = None


@dataclass(frozen=True)
class DecodeRequest:
    context_ids: tuple[int, ...]
    beam_width: int = 3
    max_len: int = 16
    break_ids: frozenset[int] = frozenset()
    mode: str = PARALLEL_CACHED


@dataclass
class CallStats:
    model_calls: int = 0
    steps: int = 0
    mode: str = PARALLEL_CACHED

    def as_dict(self) -> dict[str, Any]:
        return {"model_calls": self.model_calls, "steps": self.steps, "mode": self.mode}


def beam_search(
    model: SequenceModel, request: DecodeRequest
) -> tuple[list[Hypothesis], CallStats]:
    """Standard beam search; see module docstring for mode semantics."""
    k = request.beam_width
    max_len = request.max_len
    if k < 1:
        raise DecodeError(f"beam_width must be >= 1, got {k}")
    if max_len < 1:
        raise DecodeError(f"max_len must be >= 1, got {max_len}")
    if request.mode not in MODES:
        raise DecodeError(f"unknown mode {request.mode!r}")
    if not request.context_ids:
        raise DecodeError("empty context")
    if model.max_context is not None and len(request.context_ids) + max_len > model.max_context:
        raise ContextOverflowError(
            f"context of {len(request.context_ids)} ids + max_len {max_len} exceeds "
            f"model context {model.max_context}"
        )

    context = list(request.context_ids)
    stats = CallStats(mode=request.mode)
    cached = request.mode == PARALLEL_CACHED

    active: list[Hypothesis] = [Hypothesis((), 0.0, (), False, cache_handle=0)]
    pool: list[Hypothesis] = []
    cache: Any = None
    rows: np.ndarray | None = None
    if cached:
        row, cache = model.prefill(context)
        stats.model_calls += 1
        rows = row[np.newaxis, :]

    while active and stats.steps < max_len:
        if request.mode == SEQUENTIAL:
            row_list = []
            for hyp in active:
                row_list.append(model.next_log_prob_rows([context + list(hyp.ids)])[0])
                stats.model_calls += 1
            rows = np.stack(row_list)
        elif request.mode == PARALLEL:
            rows = model.next_log_prob_rows([context + list(hyp.ids) for hyp in active])
            stats.model_calls += 1
        stats.steps += 1

        # Per-row top-k (ordered by log-prob desc, then id asc) is exact for
        # the global top-k since scores only add per-hypothesis constants.
        candidates: list[tuple[float, tuple[int, ...], int, int, float]] = []
        take = min(k, model.vocab_size)
        for hyp_idx, hyp in enumerate(active):
            row = rows[hyp_idx]
            order = np.lexsort((np.arange(row.shape[0]), -row))[:take]
            for token in order:
                step_lp = float(row[token])
                if step_lp == _NEG_INF:
                    continue
                candidates.append(
                    (hyp.log_prob + step_lp, hyp.ids + (int(token),), hyp_idx, int(token), step_lp)
                )
        if not candidates:
            break
        candidates.sort(key=lambda c: (-c[0], c[1]))
        selected = candidates[:k]

        new_active: list[Hypothesis] = []
        parent_indices: list[int] = []
        next_tokens: list[int] = []
        for score, ids, hyp_idx, token, step_lp in selected:
            parent = active[hyp_idx]
            finished = token in request.break_ids or len(ids) >= max_len
            hyp = Hypothesis(
                ids=ids,
                log_prob=score,
                per_step_log_probs=parent.per_step_log_probs + (step_lp,),
                finished=finished,
                cache_handle=None if finished else len(new_active),
            )
            if finished:
                pool.append(hyp)
            else:
                new_active.append(hyp)
                parent_indices.append(hyp_idx)
                next_tokens.append(token)
        active = new_active

        if active and len(pool) >= k:
            # Scores are non-increasing along a path, so once the k best
            # finished hypotheses beat every active one, no continuation can
            # enter the top-k (ties keep searching).
            kth_pool = sorted(pool, key=lambda h: -h.log_prob)[k - 1].log_prob
            if max(h.log_prob for h in active) < kth_pool:
                break

        if cached and active and stats.steps < max_len:
            cache = model.select_cache(cache, parent_indices)
            rows, cache = model.extend(cache, next_tokens)
            stats.model_calls += 1

    ranked = sorted(pool + active, key=lambda h: (-h.log_prob, h.ids))
    return ranked[:k], stats


@dataclass
class EquivalenceReport:
    request: DecodeRequest
    hypotheses: list[Hypothesis]
    stats: dict[str, CallStats]
    max_score_diff: float

    def call_table(self) -> list[tuple[str, int, int]]:
        return [(mode, s.model_calls, s.steps) for mode, s in self.stats.items()]


def mode_equivalence_check(
    model: SequenceModel, request: DecodeRequest, tolerance: float = 1e-5
) -> EquivalenceReport:
    """Assert all three modes return identical sequences and scores.

    Raises DecodeMismatchError naming the first diverging rank/step.
    """
    results: dict[str, list[Hypothesis]] = {}
    stats: dict[str, CallStats] = {}
    for mode in MODES:
        mode_request = DecodeRequest(
            context_ids=request.context_ids,
            beam_width=request.beam_width,
            max_len=request.max_len,
            break_ids=request.break_ids,
            mode=mode,
        )
        results[mode], stats[mode] = beam_search(model, mode_request)

    reference = results[SEQUENTIAL]
    max_diff = 0.0
    for mode in (PARALLEL, PARALLEL_CACHED):
        other = results[mode]
        if len(other) != len(reference):
            raise DecodeMismatchError(
                f"{mode} returned {len(other)} hypotheses vs {len(reference)}",
                rank=min(len(other), len(reference)),
                step=0,
            )
        for rank, (a, b) in enumerate(zip(reference, other)):
            if a.ids != b.ids:
                step = next(
                    i for i, (x, y) in enumerate(zip(a.ids + (-1,), b.ids + (-2,))) if x != y
                )
                raise DecodeMismatchError(
                    f"{mode} diverges from sequential at rank {rank}, step {step}: "
                    f"{a.ids} vs {b.ids}",
                    rank=rank,
                    step=step,
                )
            diff = abs(a.log_prob - b.log_prob)
            max_diff = max(max_diff, diff)
            if diff > tolerance:
                raise DecodeMismatchError(
                    f"{mode} score at rank {rank} differs by {diff} (> {tolerance})",
                    rank=rank,
                    step=len(a.ids),
                )
    return EquivalenceReport(
        request=request,
        hypotheses=reference,
        stats=stats,
        max_score_diff=max_diff,
    )
