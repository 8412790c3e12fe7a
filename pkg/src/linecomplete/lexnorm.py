"""Toy-language lexing, literal normalization and canonical rendering.

Two grammars are supported: `toy-py` (indentation-scoped, `#` comments) and
`toy-c` (brace-scoped, `//` comments). Both share identifiers, the keyword
set if/else/def/return/for/var, numbers, single-line strings and the usual
operator/punctuation set. Lexing erases whitespace and style variation;
normalization replaces literals and comments with sentinel tokens so no raw
literal text survives into the modeling pipeline unless explicitly kept.

The grammar reference and canonical style rules live in docs/grammar.md.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .escapes import escape_field, unescape_field

TOY_PY = "toy-py"
TOY_C = "toy-c"
LANGUAGES = (TOY_PY, TOY_C)

KEYWORDS = frozenset({"if", "else", "def", "return", "for", "var"})

# Longest-match-first operator/punctuation list shared by both grammars.
_PUNCTS = (
    "==", "!=", "<=", ">=", "->",
    "+", "-", "*", "/", "%", "=", "<", ">",
    "(", ")", "[", "]", "{", "}", ",", ":", ";", ".",
)

BOF_TEXT = "<BOF>"
EOF_TEXT = "<EOF>"
EOL_TEXT = "<EOL>"
INDENT_TEXT = "<INDENT>"
DEDENT_TEXT = "<DEDENT>"
STR_SENTINEL = "<STR_LIT>"
NUM_SENTINEL = "<NUM_LIT>"
COMMENT_SENTINEL = "<COMMENT>"

INDENT_WIDTH = 4

# Canonical spacing: no space before closers/separators, none after openers.
# First/last-char membership is exact for this token universe (no multi-char
# token starts or ends with one of these).
_NO_SPACE_BEFORE = frozenset({",", ":", ")", "]", "}", ";", "."})
_NO_SPACE_AFTER = frozenset({"(", "[", "{", "."})


def token_separator(prev_text: str | None, next_text: str) -> str:
    """Canonical-style separator between two adjacent rendered tokens."""
    if prev_text is None or not next_text:
        return ""
    if next_text[0] in _NO_SPACE_BEFORE or prev_text[-1:] in _NO_SPACE_AFTER:
        return ""
    return " "


class TokenKind(Enum):
    IDENT = "identifier"
    KEYWORD = "keyword"
    PUNCT = "punct"
    STR_LIT = "str-lit-sentinel"
    NUM_LIT = "num-lit-sentinel"
    COMMENT = "comment-sentinel"
    KEPT_LIT = "kept-literal"
    BOF = "bof"
    EOF = "eof"
    EOL = "eol"
    INDENT = "indent"
    DEDENT = "dedent"
    LANG_PREFIX = "lang-prefix"


class LexError(Exception):
    """Illegal character; carries 1-based line and column."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


class RenderError(Exception):
    """Raised when a stream cannot be rendered (unbalanced indentation)."""


@dataclass(frozen=True)
class NormalizedToken:
    kind: TokenKind
    text: str


@dataclass(frozen=True)
class TokenStream:
    tokens: tuple[NormalizedToken, ...]
    language: str
    errors: tuple[str, ...] = ()

    def __iter__(self) -> Iterator[NormalizedToken]:
        return iter(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def texts(self) -> list[str]:
        return [t.text for t in self.tokens]

    def kinds(self) -> list[TokenKind]:
        return [t.kind for t in self.tokens]


_STRUCTURAL = {
    TokenKind.BOF: BOF_TEXT,
    TokenKind.EOF: EOF_TEXT,
    TokenKind.EOL: EOL_TEXT,
    TokenKind.INDENT: INDENT_TEXT,
    TokenKind.DEDENT: DEDENT_TEXT,
}


def _tok(kind: TokenKind) -> NormalizedToken:
    return NormalizedToken(kind, _STRUCTURAL[kind])


def string_inner(image: str) -> str:
    """Raw text between the quotes of a string image, escapes left as written."""
    return image[1:-1] if len(image) >= 2 and image[-1] == image[0] else image[1:]


def _is_ident_start(ch: str) -> bool:
    return ch.isascii() and (ch.isalpha() or ch == "_")


def _is_ident_char(ch: str) -> bool:
    return ch.isascii() and (ch.isalnum() or ch == "_")


def _lex_line(
    rest: str,
    line_no: int,
    col0: int,
    comment_marker: str,
    errors: list[str],
) -> list[NormalizedToken]:
    """Tokens of one physical line, excluding indentation and the <EOL>."""
    out: list[NormalizedToken] = []
    i = 0
    n = len(rest)
    while i < n:
        ch = rest[i]
        if ch in " \t":
            i += 1
            continue
        if rest.startswith(comment_marker, i):
            out.append(NormalizedToken(TokenKind.COMMENT, rest[i:]))
            break
        if ch in "\"'":
            quote = ch
            j = i + 1
            terminated = False
            while j < n:
                if rest[j] == "\\" and j + 1 < n:
                    j += 2
                    continue
                if rest[j] == quote:
                    terminated = True
                    j += 1
                    break
                j += 1
            if not terminated:
                errors.append(f"unterminated string at line {line_no}, column {col0 + i + 1}")
                out.append(NormalizedToken(TokenKind.STR_LIT, rest[i:]))
                break
            out.append(NormalizedToken(TokenKind.STR_LIT, rest[i:j]))
            i = j
            continue
        if ch.isdigit():
            j = i + 1
            while j < n and rest[j].isdigit():
                j += 1
            if j + 1 < n and rest[j] == "." and rest[j + 1].isdigit():
                j += 2
                while j < n and rest[j].isdigit():
                    j += 1
            out.append(NormalizedToken(TokenKind.NUM_LIT, rest[i:j]))
            i = j
            continue
        if _is_ident_start(ch):
            j = i + 1
            while j < n and _is_ident_char(rest[j]):
                j += 1
            word = rest[i:j]
            kind = TokenKind.KEYWORD if word in KEYWORDS else TokenKind.IDENT
            out.append(NormalizedToken(kind, word))
            i = j
            continue
        for punct in _PUNCTS:
            if rest.startswith(punct, i):
                out.append(NormalizedToken(TokenKind.PUNCT, punct))
                i += len(punct)
                break
        else:
            raise LexError(f"illegal character {ch!r}", line_no, col0 + i + 1)
    return out


def lex(source: str, language: str) -> TokenStream:
    """Lex toy-language source into a `<BOF>`-anchored token stream.

    Blank lines vanish; every token-bearing line ends in `<EOL>`. For toy-py,
    `<INDENT>`/`<DEDENT>` tokens are derived from leading-whitespace column
    deltas (comment-only lines never shift indentation); toy-c emits none.
    Unterminated strings lex to end of line and flag an error on the stream.
    """
    if language not in LANGUAGES:
        raise ValueError(f"unknown language {language!r}, expected one of {LANGUAGES}")
    comment_marker = "#" if language == TOY_PY else "//"
    indented = language == TOY_PY

    tokens: list[NormalizedToken] = [_tok(TokenKind.BOF)]
    errors: list[str] = []
    indent_stack = [0]

    for line_no, raw_line in enumerate(source.split("\n"), start=1):
        line = raw_line.rstrip("\r")
        stripped = line.lstrip(" \t")
        if not stripped:
            continue
        indent_col = len(line) - len(stripped)
        comment_only = stripped.startswith(comment_marker)
        if indented and not comment_only:
            if indent_col > indent_stack[-1]:
                indent_stack.append(indent_col)
                tokens.append(_tok(TokenKind.INDENT))
            else:
                while indent_col < indent_stack[-1]:
                    indent_stack.pop()
                    tokens.append(_tok(TokenKind.DEDENT))
                if indent_col != indent_stack[-1]:
                    errors.append(f"inconsistent dedent at line {line_no}")
                    indent_stack.append(indent_col)
        line_tokens = _lex_line(stripped, line_no, indent_col, comment_marker, errors)
        if line_tokens:
            tokens.extend(line_tokens)
            tokens.append(_tok(TokenKind.EOL))

    while len(indent_stack) > 1:
        indent_stack.pop()
        tokens.append(_tok(TokenKind.DEDENT))
    tokens.append(_tok(TokenKind.EOF))
    return TokenStream(tokens=tuple(tokens), language=language, errors=tuple(errors))


@dataclass(frozen=True)
class LiteralTable:
    """Most frequent literal images kept verbatim through normalization."""

    strings: tuple[tuple[str, int], ...]
    numbers: tuple[tuple[str, int], ...]
    kept_counts: Mapping[str, int] = field(default_factory=dict)

    def kept_strings(self) -> frozenset[str]:
        return frozenset(lit for lit, _ in self.strings)

    def kept_numbers(self) -> frozenset[str]:
        return frozenset(lit for lit, _ in self.numbers)

    def kept_images(self) -> list[str]:
        """Canonical kept-literal token images, strings first."""
        return [f"<STR_LIT:{lit}>" for lit, _ in self.strings] + [
            f"<NUM_LIT:{lit}>" for lit, _ in self.numbers
        ]


EMPTY_LITERAL_TABLE = LiteralTable(strings=(), numbers=(), kept_counts={})


def _is_docstring(stream: TokenStream, index: int) -> bool:
    # toy-py only: a string-literal statement opening a block (start of file
    # or first statement after an <INDENT>) is treated as documentation.
    if stream.language != TOY_PY:
        return False
    prev = stream.tokens[index - 1].kind if index > 0 else None
    nxt = stream.tokens[index + 1].kind if index + 1 < len(stream.tokens) else None
    return prev in (TokenKind.BOF, TokenKind.INDENT) and nxt in (TokenKind.EOL, TokenKind.EOF)


def build_literal_table(
    streams: Iterable[TokenStream],
    kept_counts: Mapping[str, int] | None = None,
) -> LiteralTable:
    """Count raw literal images over pre-normalization streams and keep the
    top-k per kind (ties broken lexicographically ascending).

    Defaults keep 20 strings and 5 numbers. Docstring occurrences do not
    count: they normalize to `<COMMENT>` regardless.
    """
    counts = dict(kept_counts) if kept_counts is not None else {}
    keep_str = counts.get("string", 20)
    keep_num = counts.get("number", 5)

    str_counter: Counter[str] = Counter()
    num_counter: Counter[str] = Counter()
    for stream in streams:
        for i, token in enumerate(stream.tokens):
            if token.kind == TokenKind.STR_LIT and not _is_docstring(stream, i):
                str_counter[string_inner(token.text)] += 1
            elif token.kind == TokenKind.NUM_LIT:
                num_counter[token.text] += 1

    def top_k(counter: Counter[str], k: int) -> tuple[tuple[str, int], ...]:
        ranked = sorted(counter.items(), key=lambda item: (-item[1], item[0]))
        return tuple(ranked[:k])

    return LiteralTable(
        strings=top_k(str_counter, keep_str),
        numbers=top_k(num_counter, keep_num),
        kept_counts={"string": keep_str, "number": keep_num},
    )


def normalize(stream: TokenStream, table: LiteralTable) -> TokenStream:
    """Replace literals and comments with sentinels or kept-literal tokens.

    Identifiers stay untouched; toy-py docstrings collapse to `<COMMENT>`.
    """
    kept_str = table.kept_strings()
    kept_num = table.kept_numbers()
    out: list[NormalizedToken] = []
    for i, token in enumerate(stream.tokens):
        if token.kind == TokenKind.STR_LIT:
            if _is_docstring(stream, i):
                out.append(NormalizedToken(TokenKind.COMMENT, COMMENT_SENTINEL))
                continue
            inner = string_inner(token.text)
            if inner in kept_str:
                out.append(NormalizedToken(TokenKind.KEPT_LIT, f"<STR_LIT:{inner}>"))
            else:
                out.append(NormalizedToken(TokenKind.STR_LIT, STR_SENTINEL))
        elif token.kind == TokenKind.NUM_LIT:
            if token.text in kept_num:
                out.append(NormalizedToken(TokenKind.KEPT_LIT, f"<NUM_LIT:{token.text}>"))
            else:
                out.append(NormalizedToken(TokenKind.NUM_LIT, NUM_SENTINEL))
        elif token.kind == TokenKind.COMMENT:
            out.append(NormalizedToken(TokenKind.COMMENT, COMMENT_SENTINEL))
        else:
            out.append(token)
    return TokenStream(tokens=tuple(out), language=stream.language, errors=stream.errors)


def render_tokens(texts: Iterable[str], require_balanced: bool = True) -> str:
    """Canonical-style rendering of a flat token-text sequence.

    Single space between atoms except none before `,:)]};.` and none after
    `([{.`; `<EOL>` becomes a newline; indent width is 4. Raises RenderError
    on unbalanced indent/dedent unless `require_balanced` is off (used for
    mid-file prefixes whose blocks are still open).
    """
    parts: list[str] = []
    level = 0
    at_line_start = True
    prev_text: str | None = None
    for text in texts:
        if text == BOF_TEXT:
            continue
        if text == EOF_TEXT:
            break
        if text == EOL_TEXT:
            parts.append("\n")
            at_line_start = True
            prev_text = None
            continue
        if text == INDENT_TEXT:
            level += 1
            continue
        if text == DEDENT_TEXT:
            level -= 1
            if level < 0:
                raise RenderError("dedent below top level")
            continue
        if at_line_start:
            parts.append(" " * (INDENT_WIDTH * level))
            at_line_start = False
        else:
            parts.append(token_separator(prev_text, text))
        parts.append(text)
        prev_text = text
    if require_balanced and level != 0:
        raise RenderError(f"unbalanced indentation: {level} unclosed indent(s)")
    return "".join(parts)


def render(stream: TokenStream) -> str:
    """Render a stream back to canonical-style source text."""
    return render_tokens(stream.texts())


def write_literal_table(table: LiteralTable, path: str | Path) -> None:
    """Persist as `kind \\t literal \\t count` lines."""
    lines = [f"string\t{escape_field(lit)}\t{count}" for lit, count in table.strings]
    lines += [f"number\t{escape_field(lit)}\t{count}" for lit, count in table.numbers]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_literal_table(path: str | Path) -> LiteralTable:
    strings: list[tuple[str, int]] = []
    numbers: list[tuple[str, int]] = []
    for line in Path(path).read_text(encoding="utf-8").split("\n"):
        if not line.strip():
            continue
        kind, lit, count = line.split("\t")
        if kind == "string":
            strings.append((unescape_field(lit), int(count)))
        elif kind == "number":
            numbers.append((unescape_field(lit), int(count)))
    return LiteralTable(
        strings=tuple(strings),
        numbers=tuple(numbers),
        kept_counts={"string": len(strings), "number": len(numbers)},
    )
