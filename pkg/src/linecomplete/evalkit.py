"""Offline evaluation: perplexity, ROUGE-L, edit similarity, syntax validity.

String metrics operate at character level after whitespace normalization
(runs of whitespace collapse to one space). The suite runner cuts each
held-out line at a seeded random token boundary, decodes a completion for
the prefix, post-processes both sides identically and scores the pair.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import lexnorm, suggest
from .corpus import CorpusEntry
from .decoder import DecodeRequest, PARALLEL_CACHED, SequenceModel, beam_search
from .lexnorm import TokenKind, TokenStream
from .vocab import SubtokenVocabulary, decode_token_texts, encode


def lcs_length(a: str, b: str) -> int:
    """Longest common subsequence length, O(|a|*|b|) two-row DP."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0]
        for j, cb in enumerate(b, start=1):
            if ca == cb:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[len(b)]


def levenshtein(a: str, b: str) -> int:
    """Single-character edit distance (insert/substitute/delete), two-row DP."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            cur.append(min(prev[j - 1] + cost, prev[j] + 1, cur[j - 1] + 1))
        prev = cur
    return prev[len(b)]


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


def rouge_l(candidate: str, reference: str) -> tuple[float, float]:
    """Character-level LCS precision and recall after whitespace normalization.

    Empty candidate gives (0, 0).
    """
    cand = normalize_whitespace(candidate)
    ref = normalize_whitespace(reference)
    if not cand or not ref:
        return (0.0, 0.0)
    lcs = lcs_length(cand, ref)
    return (lcs / len(cand), lcs / len(ref))


def edit_similarity(candidate: str, reference: str) -> float:
    """100 * (1 - levenshtein / max length); two empty strings score 100."""
    cand = normalize_whitespace(candidate)
    ref = normalize_whitespace(reference)
    longest = max(len(cand), len(ref))
    if longest == 0:
        return 100.0
    return 100.0 * (1.0 - levenshtein(cand, ref) / longest)


def perplexity(model: SequenceModel, sequences: Iterable[Sequence[int]]) -> float:
    """exp of the mean negative log-probability of the true next tokens
    (positions after `<BOF>` through `<EOF>`). A zero-probability token under
    a strict model makes the result infinite, reported explicitly."""
    total = 0.0
    positions = 0
    for ids in sequences:
        ids = list(ids)
        if len(ids) < 2:
            continue
        log_probs = model.sequence_log_probs(ids)
        if np.isneginf(log_probs).any():
            return float("inf")
        total += float(-log_probs.sum())
        positions += len(log_probs)
    if positions == 0:
        raise ValueError("no scoreable positions")
    return math.exp(total / positions)


_OPENERS = {"(": ")", "[": "]", "{": "}"}
_CLOSERS = {")", "]", "}"}


def syntax_valid(text: str, language: str) -> bool:
    """Simplified validity: lexes cleanly (strings terminated, indentation
    consistent) and `()[]{}` are balanced and properly nested."""
    try:
        stream = lexnorm.lex(text, language)
    except lexnorm.LexError:
        return False
    if stream.errors:
        return False
    stack: list[str] = []
    for token in stream.tokens:
        if token.kind != TokenKind.PUNCT:
            continue
        if token.text in _OPENERS:
            stack.append(_OPENERS[token.text])
        elif token.text in _CLOSERS:
            if not stack or stack.pop() != token.text:
                return False
    return not stack


def syntax_valid_rate(
    pairs: Iterable[tuple[str, str]], language: str
) -> float:
    """Percent of (context, suggestion) pairs whose combined text validates."""
    total = 0
    valid = 0
    for context, suggestion in pairs:
        total += 1
        joined = context + (" " if context and suggestion else "") + suggestion
        if syntax_valid(joined, language):
            valid += 1
    if total == 0:
        return 0.0
    return 100.0 * valid / total


@dataclass(frozen=True)
class EvalConfig:
    beam_width: int = 3
    max_len: int = 24
    seed: int = 0
    decode_mode: str = PARALLEL_CACHED
    model_id: str = ""
    corpus_id: str = ""

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:12]


@dataclass(frozen=True)
class EvalReport:
    perplexity: float
    rouge_precision: float
    rouge_recall: float
    edit_similarity_pct: float
    syntax_valid_pct: float
    samples: int
    skipped: int
    model_id: str
    corpus_id: str
    config_digest: str

    def as_text(self) -> str:
        lines = [f"{key}={value}" for key, value in asdict(self).items()]
        return "\n".join(lines) + "\n"


def write_report(report: EvalReport, path: str | Path) -> None:
    """Flat key=value block plus a machine-readable JSON record."""
    base = Path(path)
    base.write_text(report.as_text(), encoding="utf-8")
    base.with_suffix(base.suffix + ".json").write_text(
        json.dumps(asdict(report), sort_keys=True) + "\n", encoding="utf-8"
    )


def _line_cut_points(stream: TokenStream) -> list[tuple[int, int, int]]:
    """(line_start, line_end, n_content_tokens) for every content line.

    line_start indexes the first content token, line_end the <EOL> (or last
    token) position; structural indent markers stay with the context.
    """
    lines: list[tuple[int, int, int]] = []
    start: int | None = None
    for i, token in enumerate(stream.tokens):
        if token.kind in (TokenKind.BOF, TokenKind.INDENT, TokenKind.DEDENT):
            continue
        if token.kind in (TokenKind.EOL, TokenKind.EOF):
            if start is not None:
                lines.append((start, i, i - start))
            start = None
            continue
        if start is None:
            start = i
    return lines


@dataclass(frozen=True)
class EvalSample:
    context_text: str
    candidate_text: str
    reference_text: str
    language: str


def evaluate_streams(
    adapter: SequenceModel,
    streams: Sequence[TokenStream],
    vocabulary: SubtokenVocabulary,
    config: EvalConfig = EvalConfig(),
    collect_samples: bool = False,
) -> tuple[EvalReport, list[EvalSample]]:
    """Score a model over normalized streams; see module docstring.

    For each line with at least two content tokens, a seeded uniform token
    boundary inside the line splits context from reference; the decoded
    completion and the reference remainder are post-processed identically
    before scoring. Perplexity runs over the full encoded sequences.
    """
    rng = random.Random(config.seed)
    eol_id = vocabulary.special_id(lexnorm.EOL_TEXT)
    eof_id = vocabulary.special_id(lexnorm.EOF_TEXT)
    break_ids = frozenset({eol_id, eof_id})

    sequences: list[list[int]] = []
    precisions: list[float] = []
    recalls: list[float] = []
    similarities: list[float] = []
    validity_pairs: list[tuple[str, str, str]] = []
    samples: list[EvalSample] = []
    skipped = 0

    for stream in streams:
        ids = encode(stream, vocabulary)
        sequences.append(ids)
        for line_start, line_end, n_tokens in _line_cut_points(stream):
            if n_tokens < 2:
                skipped += 1
                continue
            cut = line_start + rng.randrange(1, n_tokens)
            context_tokens = stream.tokens[:cut]
            reference_tokens = stream.tokens[cut : line_end + 1]

            context_ids = encode(
                TokenStream(tokens=context_tokens, language=stream.language),
                vocabulary,
            )
            if adapter.max_context is not None:
                budget = adapter.max_context - config.max_len
                if budget < 1:
                    skipped += 1
                    continue
                context_ids = context_ids[-budget:]
            hypotheses, _ = beam_search(
                adapter,
                DecodeRequest(
                    context_ids=tuple(context_ids),
                    beam_width=config.beam_width,
                    max_len=config.max_len,
                    break_ids=break_ids,
                    mode=config.decode_mode,
                ),
            )
            candidate_tokens = (
                decode_token_texts(hypotheses[0].ids, vocabulary) if hypotheses else []
            )
            candidate = suggest.postprocess(candidate_tokens).text
            reference = suggest.postprocess([t.text for t in reference_tokens]).text

            precision, recall = rouge_l(candidate, reference)
            precisions.append(precision)
            recalls.append(recall)
            similarities.append(edit_similarity(candidate, reference))
            context_text = lexnorm.render_tokens(
                [t.text for t in context_tokens], require_balanced=False
            )
            validity_pairs.append((context_text, candidate, stream.language))
            if collect_samples:
                samples.append(
                    EvalSample(
                        context_text=context_text,
                        candidate_text=candidate,
                        reference_text=reference,
                        language=stream.language,
                    )
                )

    if not precisions:
        raise ValueError("no scoreable lines in the evaluation split")

    by_language: dict[str, list[tuple[str, str]]] = {}
    for context_text, candidate, language in validity_pairs:
        by_language.setdefault(language, []).append((context_text, candidate))
    weighted = sum(
        syntax_valid_rate(pairs, language) * len(pairs)
        for language, pairs in by_language.items()
    )
    validity = weighted / len(validity_pairs)

    report = EvalReport(
        perplexity=perplexity(adapter, sequences),
        rouge_precision=float(np.mean(precisions)),
        rouge_recall=float(np.mean(recalls)),
        edit_similarity_pct=float(np.mean(similarities)),
        syntax_valid_pct=validity,
        samples=len(precisions),
        skipped=skipped,
        model_id=config.model_id,
        corpus_id=config.corpus_id,
        config_digest=config.digest(),
    )
    return report, samples


def load_split_streams(
    entries: Sequence[CorpusEntry],
    literal_table: lexnorm.LiteralTable,
) -> list[TokenStream]:
    streams = []
    for entry in entries:
        source = Path(entry.file_path).read_text(encoding="utf-8")
        streams.append(
            lexnorm.normalize(lexnorm.lex(source, entry.language), literal_table)
        )
    return streams


def evaluate(
    adapter: SequenceModel,
    entries: Sequence[CorpusEntry],
    vocabulary: SubtokenVocabulary,
    literal_table: lexnorm.LiteralTable,
    config: EvalConfig = EvalConfig(),
) -> EvalReport:
    """File-backed wrapper over `evaluate_streams` for a manifest split."""
    if not entries:
        raise ValueError("empty evaluation split")
    streams = load_split_streams(entries, literal_table)
    report, _ = evaluate_streams(adapter, streams, vocabulary, config)
    return report
