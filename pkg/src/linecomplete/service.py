"""Completion web service: stateless model inference behind `POST /v1/completions`.

The engine lexes and normalizes the request context as a file prefix, left-
truncates it to fit the model context, beam-decodes whole-line suggestions
and returns them with display text, placeholder spans, a serialized
completion trie and call statistics. All caching is client-side; the server
shares immutable model parameters across concurrent requests.
"""

from __future__ import annotations

import hashlib
import threading
import time
from dataclasses import dataclass
from typing import Sequence

from pydantic import BaseModel, Field

from . import lexnorm, suggest
from .decoder import (
    DecodeRequest,
    Hypothesis,
    PARALLEL_CACHED,
    SequenceModel,
    beam_search,
)
from .lexnorm import LiteralTable, NormalizedToken, TokenKind
from .suggest import DEFAULT_ALPHA, DEFAULT_KAPPA
from .vocab import SubtokenVocabulary, decode_token_texts, encode

MAX_CONTEXT_CHARS = 100_000
MAX_BEAM_WIDTH = 32
MAX_SUGGESTION_LEN = 64

_STRUCTURAL_KINDS = (
    TokenKind.BOF,
    TokenKind.EOF,
    TokenKind.EOL,
    TokenKind.INDENT,
    TokenKind.DEDENT,
)


class RequestError(ValueError):
    """Malformed completion request (maps to a 400-class response)."""


def validate_request(context: str, language: str, beam_width: int, max_len: int) -> None:
    if len(context) > MAX_CONTEXT_CHARS:
        raise RequestError(f"context exceeds {MAX_CONTEXT_CHARS} characters")
    if language not in lexnorm.LANGUAGES:
        raise RequestError(f"unknown language {language!r}")
    if not 1 <= beam_width <= MAX_BEAM_WIDTH:
        raise RequestError(f"beam_width must be in [1, {MAX_BEAM_WIDTH}]")
    if not 1 <= max_len <= MAX_SUGGESTION_LEN:
        raise RequestError(f"max_len must be in [1, {MAX_SUGGESTION_LEN}]")


def prefix_tokens(
    context: str, language: str, table: LiteralTable
) -> list[NormalizedToken]:
    """Normalize a code prefix: drop `<EOF>`, the auto-flushed dedents, and
    the final `<EOL>` when the context stops mid-line."""
    stream = lexnorm.normalize(lexnorm.lex(context, language), table)
    tokens = list(stream.tokens)
    assert tokens[-1].kind == TokenKind.EOF
    tokens.pop()
    while tokens and tokens[-1].kind == TokenKind.DEDENT:
        tokens.pop()
    if tokens and tokens[-1].kind == TokenKind.EOL and not context.endswith("\n"):
        tokens.pop()
    return tokens


def cursor_line_offset(context: str) -> int:
    """Character offset of the query point within its line (the trie's L)."""
    return len(context) - (context.rfind("\n") + 1)


@dataclass(frozen=True)
class SuggestionPayload:
    subtokens: tuple[str, ...]
    scores: tuple[float, ...]
    total_log_prob: float
    display_text: str
    placeholders: tuple[suggest.PlaceholderSpan, ...]


@dataclass(frozen=True)
class CompletionResult:
    suggestions: tuple[SuggestionPayload, ...]
    trie: suggest.CompletionTrie
    call_stats: dict
    latency_ms: float
    truncated_context: bool


class CompletionEngine:
    """Shared immutable model state plus the request->suggestions pipeline."""

    def __init__(
        self,
        adapter: SequenceModel,
        vocabulary: SubtokenVocabulary,
        literal_table: LiteralTable,
        model_digest: str = "",
        decode_mode: str = PARALLEL_CACHED,
    ):
        self.adapter = adapter
        self.vocabulary = vocabulary
        self.literal_table = literal_table
        self.model_digest = model_digest or "unversioned"
        self.decode_mode = decode_mode
        eol = vocabulary.special_id(lexnorm.EOL_TEXT)
        eof = vocabulary.special_id(lexnorm.EOF_TEXT)
        self.break_ids = frozenset({eol, eof})

    def complete(
        self,
        context: str,
        language: str = lexnorm.TOY_PY,
        beam_width: int = 3,
        max_len: int = 24,
        alpha: float = DEFAULT_ALPHA,
        kappa: float = DEFAULT_KAPPA,
    ) -> CompletionResult:
        validate_request(context, language, beam_width, max_len)
        started = time.perf_counter()

        tokens = prefix_tokens(context, language, self.literal_table)
        context_ids = encode(
            lexnorm.TokenStream(tokens=tuple(tokens), language=language),
            self.vocabulary,
        )
        truncated = False
        if self.adapter.max_context is not None:
            budget = self.adapter.max_context - max_len
            if budget < 1:
                raise RequestError(
                    f"max_len {max_len} leaves no room in a context of "
                    f"{self.adapter.max_context}"
                )
            if len(context_ids) > budget:
                context_ids = context_ids[-budget:]
                truncated = True

        hypotheses, stats = beam_search(
            self.adapter,
            DecodeRequest(
                context_ids=tuple(context_ids),
                beam_width=beam_width,
                max_len=max_len,
                break_ids=self.break_ids,
                mode=self.decode_mode,
            ),
        )

        prev_text = _last_content_text(tokens)
        trie = suggest.build_trie(
            hypotheses,
            self.vocabulary,
            root_position=cursor_line_offset(context),
            prev_token_text=prev_text,
        )
        payloads = tuple(self._payload(h) for h in hypotheses)
        latency_ms = (time.perf_counter() - started) * 1000.0
        return CompletionResult(
            suggestions=payloads,
            trie=trie,
            call_stats=stats.as_dict(),
            latency_ms=latency_ms,
            truncated_context=truncated,
        )

    def _payload(self, hypothesis: Hypothesis) -> SuggestionPayload:
        processed = suggest.postprocess(
            decode_token_texts(hypothesis.ids, self.vocabulary)
        )
        return SuggestionPayload(
            subtokens=tuple(
                self.vocabulary.visible_image(i) for i in hypothesis.ids
            ),
            scores=hypothesis.per_step_log_probs,
            total_log_prob=hypothesis.log_prob,
            display_text=processed.text,
            placeholders=processed.placeholders,
        )


def _last_content_text(tokens: Sequence[NormalizedToken]) -> str | None:
    if not tokens or tokens[-1].kind in _STRUCTURAL_KINDS:
        return None
    return tokens[-1].text


def state_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def result_to_wire(result: CompletionResult) -> dict:
    return {
        "schema": "v1",
        "suggestions": [
            {
                "subtokens": list(s.subtokens),
                "scores": list(s.scores),
                "total_log_prob": s.total_log_prob,
                "display_text": s.display_text,
                "placeholders": [
                    {
                        "start": p.start,
                        "end": p.end,
                        "kind": p.kind,
                        "default_text": p.default_text,
                    }
                    for p in s.placeholders
                ],
            }
            for s in result.suggestions
        ],
        "trie": suggest.trie_to_wire(result.trie),
        "call_stats": result.call_stats,
        "latency_ms": result.latency_ms,
        "truncated_context": result.truncated_context,
    }


class CompletionBody(BaseModel):
    """Wire schema of `POST /v1/completions` (the CompletionRequest)."""

    context: str = Field(max_length=MAX_CONTEXT_CHARS)
    language: str = lexnorm.TOY_PY
    beam_width: int = Field(default=3, ge=1, le=MAX_BEAM_WIDTH)
    max_len: int = Field(default=24, ge=1, le=MAX_SUGGESTION_LEN)
    alpha: float = Field(default=DEFAULT_ALPHA, gt=0.0, le=1.0)
    kappa: float = Field(default=DEFAULT_KAPPA, gt=0.0)


def create_app(engine: CompletionEngine, max_concurrent: int = 8):
    """FastAPI app exposing `POST /v1/completions` and `GET /v1/health`."""
    from fastapi import FastAPI
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import JSONResponse

    app = FastAPI(title="linecomplete", version="v1")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    gate = threading.Semaphore(max_concurrent)

    @app.get("/v1/health")
    def health() -> dict:
        return {
            "schema": "v1",
            "status": "ok",
            "model_digest": engine.model_digest,
            "vocab_size": engine.vocabulary.size,
        }

    @app.post("/v1/completions")
    def completions(body: CompletionBody):
        if not gate.acquire(blocking=False):
            return JSONResponse(
                status_code=429,
                content={
                    "schema": "v1",
                    "error": "server overloaded",
                    "retry_after_ms": 200,
                },
                headers={"Retry-After": "1"},
            )
        try:
            result = engine.complete(
                context=body.context,
                language=body.language,
                beam_width=body.beam_width,
                max_len=body.max_len,
                alpha=body.alpha,
                kappa=body.kappa,
            )
            return result_to_wire(result)
        except RequestError as exc:
            return JSONResponse(
                status_code=400,
                content={"schema": "v1", "error": str(exc)},
            )
        finally:
            gate.release()

    return app


def serve(engine: CompletionEngine, host: str = "127.0.0.1", port: int = 8732) -> None:
    import uvicorn

    uvicorn.run(create_app(engine), host=host, port=port, log_level="warning")
