"""Subtoken vocabularies: byte-pair encoding and casing-convention splitting.

BPE merges are learned within token boundaries only, never across tokens.
Each token's character sequence gets a trailing end-of-token marker symbol so
token-final subtokens stay distinct from mid-token ones and decoding can
recover token boundaries. Special tokens (structural markers, sentinels,
kept-literal images, language control codes) are pre-seeded with dedicated
ids and are never merged or split.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import lexnorm
from .escapes import escape_field, unescape_field
from .lexnorm import LiteralTable, TokenKind, TokenStream

# Private-use marker appended to every token before merging. The character
# base set is latin-1, so the marker can never collide with content.
END_MARK = ""

SEP_TEXT = "<SEP>"

CORE_SPECIALS = (
    lexnorm.BOF_TEXT,
    lexnorm.EOF_TEXT,
    lexnorm.EOL_TEXT,
    lexnorm.INDENT_TEXT,
    lexnorm.DEDENT_TEXT,
    lexnorm.STR_SENTINEL,
    lexnorm.NUM_SENTINEL,
    lexnorm.COMMENT_SENTINEL,
)

DEFAULT_TARGET_SIZE = 2000

# Token kinds whose text is looked up as a single special id.
_SPECIAL_KINDS = frozenset(
    {
        TokenKind.BOF,
        TokenKind.EOF,
        TokenKind.EOL,
        TokenKind.INDENT,
        TokenKind.DEDENT,
        TokenKind.STR_LIT,
        TokenKind.NUM_LIT,
        TokenKind.COMMENT,
        TokenKind.KEPT_LIT,
        TokenKind.LANG_PREFIX,
    }
)


class VocabError(Exception):
    pass


class EncodeError(VocabError):
    pass


class DecodeError(VocabError):
    pass


def lang_prefix_text(language: str) -> str:
    return f"<LANG:{language}>"


def _base_chars() -> list[str]:
    return [chr(i) for i in range(256)] + [END_MARK]


@dataclass
class SubtokenVocabulary:
    id_of: dict[str, int]
    subtoken_of: list[str]
    merges: list[tuple[str, str]]
    specials: frozenset[int]
    warnings: tuple[str, ...] = ()
    _word_cache: dict[str, tuple[int, ...]] = field(default_factory=dict, repr=False)
    _rank_cache: dict[tuple[str, str], int] | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return len(self.subtoken_of)

    def special_id(self, text: str) -> int:
        sid = self.id_of.get(text)
        if sid is None or sid not in self.specials:
            raise VocabError(f"not a registered special token: {text!r}")
        return sid

    def is_special(self, token_id: int) -> bool:
        return token_id in self.specials

    def image(self, token_id: int) -> str:
        if not 0 <= token_id < self.size:
            raise DecodeError(f"id {token_id} out of range for vocabulary of size {self.size}")
        return self.subtoken_of[token_id]

    def visible_image(self, token_id: int) -> str:
        """Image with the end-of-token marker stripped."""
        return self.image(token_id).replace(END_MARK, "")

    def ends_token(self, token_id: int) -> bool:
        """True when this id closes a token (specials are whole tokens)."""
        return token_id in self.specials or self.subtoken_of[token_id].endswith(END_MARK)

    def _merge_ranks(self) -> dict[tuple[str, str], int]:
        if self._rank_cache is None:
            self._rank_cache = {pair: rank for rank, pair in enumerate(self.merges)}
        return self._rank_cache

    def encode_word(self, text: str) -> tuple[int, ...]:
        """BPE-encode one non-special token (marker appended first)."""
        cached = self._word_cache.get(text)
        if cached is not None:
            return cached
        for ch in text:
            if ch not in self.id_of:
                raise EncodeError(f"character {ch!r} not in vocabulary base set")
        symbols = list(text) + [END_MARK]
        ranks = self._merge_ranks()
        # Repeatedly merging the lowest-ranked pair present is equivalent to
        # replaying the learned merges in order: an earlier merge can never
        # become newly applicable after a later one fires.
        while len(symbols) > 1:
            best_rank = None
            best_pair = None
            for pair in zip(symbols, symbols[1:]):
                rank = ranks.get(pair)
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
                    best_pair = pair
            if best_pair is None:
                break
            symbols = _apply_merge(symbols, best_pair)
        ids = tuple(self.id_of[s] for s in symbols)
        self._word_cache[text] = ids
        return ids


def _apply_merge(symbols: list[str], pair: tuple[str, str]) -> list[str]:
    left, right = pair
    out: list[str] = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def _special_texts(
    literal_table: LiteralTable | None,
    languages: Sequence[str],
) -> list[str]:
    texts = list(CORE_SPECIALS)
    if literal_table is not None:
        texts.extend(literal_table.kept_images())
    texts.extend(lang_prefix_text(lang) for lang in languages)
    texts.append(SEP_TEXT)
    return texts


def train_bpe(
    streams: Iterable[TokenStream],
    target_size: int = DEFAULT_TARGET_SIZE,
    literal_table: LiteralTable | None = None,
    languages: Sequence[str] = lexnorm.LANGUAGES,
) -> SubtokenVocabulary:
    """Learn BPE merges over the corpus until `target_size` ids exist.

    The most frequent adjacent symbol pair is merged greedily; ties break
    lexicographically on the concatenated pair. Stops early with a warning
    when no pair occurs at least twice.
    """
    specials = _special_texts(literal_table, languages)
    base = _base_chars()
    floor_size = len(specials) + len(base)
    if target_size < floor_size:
        raise VocabError(
            f"target_size {target_size} below base+specials floor {floor_size}"
        )

    id_of: dict[str, int] = {}
    subtoken_of: list[str] = []
    for text in specials + base:
        if text in id_of:
            raise VocabError(f"duplicate special/base entry: {text!r}")
        id_of[text] = len(subtoken_of)
        subtoken_of.append(text)
    special_ids = frozenset(range(len(specials)))

    # Word frequencies over non-special tokens; merges never cross tokens.
    word_counts: Counter[str] = Counter()
    for stream in streams:
        for token in stream.tokens:
            if token.kind not in _SPECIAL_KINDS:
                word_counts[token.text] += 1

    seqs: dict[str, list[str]] = {w: list(w) + [END_MARK] for w in word_counts}
    merges: list[tuple[str, str]] = []
    warnings: list[str] = []
    while len(subtoken_of) < target_size:
        pair_counts: Counter[tuple[str, str]] = Counter()
        for word, symbols in seqs.items():
            count = word_counts[word]
            for pair in zip(symbols, symbols[1:]):
                pair_counts[pair] += count
        if not pair_counts:
            warnings.append(
                f"corpus exhausted at vocabulary size {len(subtoken_of)}"
                f" (target {target_size})"
            )
            break
        best_pair, best_count = min(
            pair_counts.items(), key=lambda kv: (-kv[1], kv[0][0] + kv[0][1], kv[0][0])
        )
        if best_count < 2:
            warnings.append(
                f"no pair repeats at vocabulary size {len(subtoken_of)}"
                f" (target {target_size})"
            )
            break
        merges.append(best_pair)
        merged = best_pair[0] + best_pair[1]
        if merged not in id_of:
            id_of[merged] = len(subtoken_of)
            subtoken_of.append(merged)
        for word in seqs:
            seqs[word] = _apply_merge(seqs[word], best_pair)

    return SubtokenVocabulary(
        id_of=id_of,
        subtoken_of=subtoken_of,
        merges=merges,
        specials=special_ids,
        warnings=tuple(warnings),
    )


def encode(stream: TokenStream, vocabulary: SubtokenVocabulary) -> list[int]:
    """Map a (normalized) token stream to subtoken ids.

    Special-token texts map to their single ids; everything else goes
    through the learned merges. Deterministic.
    """
    ids: list[int] = []
    for token in stream.tokens:
        if token.kind in _SPECIAL_KINDS:
            sid = vocabulary.id_of.get(token.text)
            if sid is None:
                raise EncodeError(f"unregistered special token text: {token.text!r}")
            ids.append(sid)
        else:
            ids.extend(vocabulary.encode_word(token.text))
    return ids


def decode(ids: Sequence[int], vocabulary: SubtokenVocabulary) -> str:
    """Concatenated surface text: subtoken images joined, markers dropped,
    special ids restored to their canonical images."""
    return "".join(vocabulary.visible_image(i) for i in ids)


def decode_token_texts(ids: Sequence[int], vocabulary: SubtokenVocabulary) -> list[str]:
    """Group subtoken ids back into whole-token texts at marker boundaries.

    A trailing group without its end marker (mid-token decode) is returned
    as-is.
    """
    tokens: list[str] = []
    pending = ""
    for i in ids:
        if vocabulary.is_special(i):
            if pending:
                tokens.append(pending)
                pending = ""
            tokens.append(vocabulary.image(i))
        else:
            pending += vocabulary.visible_image(i)
            if vocabulary.ends_token(i):
                tokens.append(pending)
                pending = ""
    if pending:
        tokens.append(pending)
    return tokens


@dataclass(frozen=True)
class CasingSplit:
    """Identifier subtokens plus the separators needed to reconstruct.

    `separators` has one more entry than `parts`; the original identifier is
    separators[0] + parts[0] + separators[1] + ... + parts[-1] + separators[-1].
    """

    parts: tuple[str, ...]
    separators: tuple[str, ...]

    def reconstruct(self) -> str:
        out = [self.separators[0]]
        for part, sep in zip(self.parts, self.separators[1:]):
            out.append(part)
            out.append(sep)
        return "".join(out)


def split_by_casing(identifier: str) -> CasingSplit:
    """Split camelCase/PascalCase/snake_case identifiers into subtokens.

    An uppercase run followed by a lowercase letter splits before the run's
    last letter (HTTPServer -> HTTP, Server).
    """
    if not identifier:
        raise ValueError("identifier must be non-empty")

    # Phase 1: underscore runs become separators.
    segments: list[str] = []
    seps: list[str] = [""]
    i = 0
    n = len(identifier)
    while i < n:
        if identifier[i] == "_":
            j = i
            while j < n and identifier[j] == "_":
                j += 1
            if segments:
                seps.append(identifier[i:j])
            else:
                seps[0] += identifier[i:j]
            i = j
        else:
            j = i
            while j < n and identifier[j] != "_":
                j += 1
            if len(seps) == len(segments):
                seps.append("")
            segments.append(identifier[i:j])
            i = j
    if len(seps) == len(segments):
        seps.append("")

    # Phase 2: split each segment at casing boundaries (empty separator).
    parts: list[str] = []
    separators: list[str] = [seps[0]]
    for seg_index, segment in enumerate(segments):
        pieces = _split_casing_word(segment)
        parts.extend(pieces)
        separators.extend([""] * (len(pieces) - 1))
        separators.append(seps[seg_index + 1])
    if not parts:
        # All-underscore identifier: a single empty part keeps the shape.
        parts = [""]
        separators = [seps[0], seps[1] if len(seps) > 1 else ""]
    return CasingSplit(parts=tuple(parts), separators=tuple(separators))


def _split_casing_word(word: str) -> list[str]:
    if not word:
        return []
    boundaries: list[int] = []
    for i in range(1, len(word)):
        prev, cur = word[i - 1], word[i]
        if cur.isupper() and (prev.islower() or prev.isdigit()):
            boundaries.append(i)
        elif (
            cur.isupper()
            and prev.isupper()
            and i + 1 < len(word)
            and word[i + 1].islower()
        ):
            boundaries.append(i)
    pieces = []
    start = 0
    for b in boundaries:
        pieces.append(word[start:b])
        start = b
    pieces.append(word[start:])
    return pieces


def write_vocabulary(vocabulary: SubtokenVocabulary, path: str | Path) -> None:
    """Persist as `bpe-vocab v1` header, id/subtoken lines, then merges."""
    lines = [f"bpe-vocab v1 size={vocabulary.size}"]
    for token_id, text in enumerate(vocabulary.subtoken_of):
        lines.append(f"{token_id}\t{escape_field(text)}")
    lines.append("#merges")
    for left, right in vocabulary.merges:
        lines.append(f"{escape_field(left)}\t{escape_field(right)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_vocabulary(path: str | Path) -> SubtokenVocabulary:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if not lines or not lines[0].startswith("bpe-vocab v1 "):
        raise VocabError(f"not a bpe-vocab v1 file: {path}")
    declared = int(lines[0].split("size=", 1)[1])
    subtoken_of: list[str] = []
    id_of: dict[str, int] = {}
    merges: list[tuple[str, str]] = []
    in_merges = False
    for line in lines[1:]:
        if line == "#merges":
            in_merges = True
            continue
        if not line:
            continue
        left, right = line.split("\t", 1)
        if in_merges:
            merges.append((unescape_field(left), unescape_field(right)))
        else:
            token_id = int(left)
            text = unescape_field(right)
            if token_id != len(subtoken_of):
                raise VocabError(f"non-dense id {token_id} in {path}")
            id_of[text] = token_id
            subtoken_of.append(text)
    if len(subtoken_of) != declared:
        raise VocabError(
            f"size mismatch in {path}: header {declared}, found {len(subtoken_of)}"
        )
    specials = frozenset(
        i for i, text in enumerate(subtoken_of) if _looks_special(text)
    )
    return SubtokenVocabulary(
        id_of=id_of,
        subtoken_of=subtoken_of,
        merges=merges,
        specials=specials,
    )


def _looks_special(text: str) -> bool:
    if text in CORE_SPECIALS or text == SEP_TEXT:
        return True
    return (
        text.startswith(("<STR_LIT:", "<NUM_LIT:", "<LANG:"))
        and text.endswith(">")
        and len(text) > 2
    )
