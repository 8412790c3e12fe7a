"""Completion tries: scored suggestion trees cached client-side.

Ranked hypotheses merge into a trie whose node scores are cumulative
probabilities (exp of summed log-probs), so every edge's child/parent score
ratio is the conditional probability of that continuation. Greedy traversal
follows the best-scored child and stops when no child clears the logistic
early-stop ratio R = alpha / (1 + exp(-L / kappa)), where L is the character
offset of the query point within its line.

Node images are display chunks: the subtoken's visible text prefixed with
the canonical-style separator owed at that point, so concatenating a path
reproduces exactly the text a client renders and keystroke pruning can walk
the tree character by character. Sentinel tokens (`<STR_LIT>` etc.) keep
their canonical images; typing over their placeholder text is a cache miss
by design and triggers a fresh query.

Pruning keeps absolute scores and the original root position: the pruned
trie is a view into the same suggestion, so traversal decisions (and R)
match the unpruned tree along the typed path.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import lexnorm
from .decoder import Hypothesis
from .lexnorm import token_separator
from .vocab import SubtokenVocabulary

DEFAULT_ALPHA = 0.8
DEFAULT_KAPPA = 10.0

CACHE_CAPACITY = 64
CACHE_KEY_CHARS = 200

_STRUCTURAL_IMAGES = frozenset(
    {
        lexnorm.BOF_TEXT,
        lexnorm.EOF_TEXT,
        lexnorm.EOL_TEXT,
        lexnorm.INDENT_TEXT,
        lexnorm.DEDENT_TEXT,
    }
)


@dataclass
class TrieNode:
    image: str
    score: float
    children: dict[str, "TrieNode"] = field(default_factory=dict)


@dataclass
class CompletionTrie:
    root: TrieNode
    root_position: int

    def is_empty(self) -> bool:
        return not self.root.children


def early_stop_ratio(position: int, alpha: float = DEFAULT_ALPHA, kappa: float = DEFAULT_KAPPA) -> float:
    """Logistic threshold R; R(0) = alpha/2, R -> alpha as position grows."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if kappa <= 0.0:
        raise ValueError(f"kappa must be > 0, got {kappa}")
    if position < 0:
        raise ValueError(f"position must be >= 0, got {position}")
    return alpha / (1.0 + math.exp(-position / kappa))


def display_chunks(
    ids: Sequence[int],
    vocabulary: SubtokenVocabulary,
    prev_token_text: str | None = None,
) -> list[str]:
    """Per-subtoken display chunks (separator + visible text).

    `prev_token_text` is the last context token before the query point, used
    to decide whether the first chunk owes a leading space.
    """
    chunks: list[str] = []
    current_token = ""
    for token_id in ids:
        image = vocabulary.image(token_id)
        if vocabulary.is_special(token_id):
            if current_token:
                prev_token_text = current_token
                current_token = ""
            if image in _STRUCTURAL_IMAGES:
                chunks.append(image)
                prev_token_text = None  # line markers reset spacing
            else:
                chunks.append(token_separator(prev_token_text, image) + image)
                prev_token_text = image
            continue
        visible = vocabulary.visible_image(token_id)
        sep = token_separator(prev_token_text, visible) if not current_token else ""
        chunks.append(sep + visible)
        current_token += visible
        if vocabulary.ends_token(token_id):
            prev_token_text = current_token
            current_token = ""
    return chunks


def build_trie_from_paths(
    paths: Iterable[tuple[Sequence[str], Sequence[float]]],
    root_position: int = 0,
) -> CompletionTrie:
    """Merge (images, per-step log-probs) paths by common prefix.

    Node score is exp of the cumulative log-prob of that prefix, max over
    hypotheses sharing it.
    """
    root = TrieNode(image="", score=1.0)
    for images, step_log_probs in paths:
        if len(images) != len(step_log_probs):
            raise ValueError("images and per-step log-probs must align")
        node = root
        cumulative = 0.0
        for image, lp in zip(images, step_log_probs):
            cumulative += lp
            score = math.exp(cumulative)
            child = node.children.get(image)
            if child is None:
                child = TrieNode(image=image, score=score)
                node.children[image] = child
            else:
                child.score = max(child.score, score)
            node = child
    return CompletionTrie(root=root, root_position=root_position)


def build_trie(
    hypotheses: Sequence[Hypothesis],
    vocabulary: SubtokenVocabulary,
    root_position: int = 0,
    prev_token_text: str | None = None,
) -> CompletionTrie:
    """Trie over ranked decoder hypotheses sharing one context."""
    paths = []
    for hyp in hypotheses:
        chunks = display_chunks(hyp.ids, vocabulary, prev_token_text=prev_token_text)
        paths.append((chunks, list(hyp.per_step_log_probs)))
    return build_trie_from_paths(paths, root_position=root_position)


def traverse_greedy(
    trie: CompletionTrie,
    alpha: float = DEFAULT_ALPHA,
    kappa: float = DEFAULT_KAPPA,
) -> list[str]:
    """Follow the best-scored child until no child clears R * parent score.

    Ties break on lexicographically smallest image. Empty trie gives an
    empty suggestion.
    """
    ratio = early_stop_ratio(trie.root_position, alpha, kappa)
    node = trie.root
    out: list[str] = []
    while node.children:
        best = min(node.children.values(), key=lambda c: (-c.score, c.image))
        if best.score < ratio * node.score:
            break
        out.append(best.image)
        node = best
    return out


def _merge_nodes(a: TrieNode, b: TrieNode) -> TrieNode:
    merged = TrieNode(image=a.image, score=max(a.score, b.score), children=dict(a.children))
    for key, child in b.children.items():
        if key in merged.children:
            merged.children[key] = _merge_nodes(merged.children[key], child)
        else:
            merged.children[key] = child
    return merged


def prune_on_keystroke(trie: CompletionTrie, typed_char: str) -> CompletionTrie | None:
    """Re-root the trie past one typed character, or None on a miss.

    A child whose image is exactly the typed character is consumed: its
    children surface and the root score becomes its score (keeping ratio
    tests identical to the original tree). Longer matching images are split
    character-wise. The root position stays anchored at the query point.
    """
    if len(typed_char) != 1:
        raise ValueError("prune consumes exactly one character per keystroke")
    consumed_score: float | None = None
    new_children: dict[str, TrieNode] = {}
    for child in trie.root.children.values():
        if not child.image.startswith(typed_char):
            continue
        if len(child.image) == 1:
            consumed_score = child.score
            for key, grandchild in child.children.items():
                if key in new_children:
                    new_children[key] = _merge_nodes(new_children[key], grandchild)
                else:
                    new_children[key] = grandchild
        else:
            suffix = TrieNode(
                image=child.image[1:], score=child.score, children=child.children
            )
            if suffix.image in new_children:
                new_children[suffix.image] = _merge_nodes(new_children[suffix.image], suffix)
            else:
                new_children[suffix.image] = suffix
    if not new_children and consumed_score is None:
        return None
    root_score = consumed_score if consumed_score is not None else trie.root.score
    return CompletionTrie(
        root=TrieNode(image="", score=root_score, children=new_children),
        root_position=trie.root_position,
    )


class SuggestionCache:
    """LRU cache of tries keyed by the code immediately preceding the query
    point (last 200 characters, exact match)."""

    def __init__(self, capacity: int = CACHE_CAPACITY, key_chars: int = CACHE_KEY_CHARS):
        self.capacity = capacity
        self.key_chars = key_chars
        self._entries: OrderedDict[str, CompletionTrie] = OrderedDict()

    def _key(self, preceding_code: str) -> str:
        return preceding_code[-self.key_chars:]

    def lookup(self, preceding_code: str) -> CompletionTrie | None:
        key = self._key(preceding_code)
        trie = self._entries.get(key)
        if trie is not None:
            self._entries.move_to_end(key)
        return trie

    def store(self, preceding_code: str, trie: CompletionTrie) -> None:
        key = self._key(preceding_code)
        self._entries[key] = trie
        self._entries.move_to_end(key)
        while len(self._entries) > self.capacity:
            self._entries.popitem(last=False)

    def __len__(self) -> int:
        return len(self._entries)


@dataclass(frozen=True)
class PlaceholderSpan:
    start: int
    end: int
    kind: str
    default_text: str


@dataclass(frozen=True)
class ProcessedSuggestion:
    text: str
    placeholders: tuple[PlaceholderSpan, ...]
    truncated_at_eol: bool


def postprocess(token_texts: Sequence[str]) -> ProcessedSuggestion:
    """Turn decoded token texts into display text plus placeholder spans.

    `<BOF>`/`<EOF>` (and stray indent markers) are dropped; the suggestion is
    truncated at the first `<EOL>`; `<STR_LIT>` becomes an empty-string
    placeholder `""`, `<NUM_LIT>` the digit 0, kept literals their raw image,
    `<COMMENT>` stays verbatim as a replaceable span. Canonical spacing rules
    apply between tokens.
    """
    parts: list[str] = []
    spans: list[PlaceholderSpan] = []
    length = 0
    prev_text: str | None = None
    truncated = False

    def emit(text: str) -> int:
        nonlocal length, prev_text
        sep = token_separator(prev_text, text)
        parts.append(sep + text)
        start = length + len(sep)
        length += len(sep) + len(text)
        prev_text = text
        return start

    for raw in token_texts:
        if raw in (lexnorm.BOF_TEXT, lexnorm.EOF_TEXT, lexnorm.INDENT_TEXT, lexnorm.DEDENT_TEXT):
            continue
        if raw == lexnorm.EOL_TEXT:
            truncated = True
            break
        if raw == lexnorm.STR_SENTINEL:
            start = emit('""')
            spans.append(PlaceholderSpan(start + 1, start + 1, "str-lit", ""))
        elif raw == lexnorm.NUM_SENTINEL:
            start = emit("0")
            spans.append(PlaceholderSpan(start, start + 1, "num-lit", "0"))
        elif raw.startswith("<STR_LIT:") and raw.endswith(">"):
            lit = raw[len("<STR_LIT:"):-1]
            start = emit(f'"{lit}"')
            spans.append(PlaceholderSpan(start + 1, start + 1 + len(lit), "kept-str", lit))
        elif raw.startswith("<NUM_LIT:") and raw.endswith(">"):
            lit = raw[len("<NUM_LIT:"):-1]
            start = emit(lit)
            spans.append(PlaceholderSpan(start, start + len(lit), "kept-num", lit))
        elif raw == lexnorm.COMMENT_SENTINEL:
            start = emit(raw)
            spans.append(PlaceholderSpan(start, start + len(raw), "comment", raw))
        else:
            emit(raw)
    return ProcessedSuggestion(
        text="".join(parts),
        placeholders=tuple(spans),
        truncated_at_eol=truncated,
    )


def _node_to_record(node: TrieNode) -> dict:
    return {
        "subtoken": node.image,
        "score": node.score,
        "children": [
            _node_to_record(node.children[key]) for key in sorted(node.children)
        ],
    }


def _node_from_record(record: dict) -> TrieNode:
    node = TrieNode(image=record["subtoken"], score=float(record["score"]))
    for child in record.get("children", []):
        parsed = _node_from_record(child)
        node.children[parsed.image] = parsed
    return node


def trie_to_wire(trie: CompletionTrie) -> dict:
    """Nested records in canonical depth-first order (children sorted)."""
    return {
        "version": "v1",
        "root_position": trie.root_position,
        "root": _node_to_record(trie.root),
    }


def trie_from_wire(payload: dict) -> CompletionTrie:
    return CompletionTrie(
        root=_node_from_record(payload["root"]),
        root_position=int(payload["root_position"]),
    )


def trie_to_json(trie: CompletionTrie) -> str:
    return json.dumps(trie_to_wire(trie), sort_keys=True)


def trie_from_json(text: str) -> CompletionTrie:
    return trie_from_wire(json.loads(text))
