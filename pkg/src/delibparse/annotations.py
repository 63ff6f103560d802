"""Bracketed semantic-parse annotations: trees, (de)serialization, exact match.

An annotation is a whitespace-delimited token sequence mixing ontology
tokens (intent openers ``[IN:LABEL``, slot openers ``[SL:LABEL``, and the
closer ``]``) with plain text words, e.g.::

    [IN:PLAY_MUSIC play [SL:PLAYLIST jacques ] [SL:TYPE station ] ]

Intents may nest under slots and vice versa (compositional parses); a slot
directly under a slot or an intent directly under an intent is illegal.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Union


class AnnotationError(ValueError):
    """Base class for malformed annotation strings."""


class UnbalancedBrackets(AnnotationError):
    pass


class RootNotIntent(AnnotationError):
    pass


class IllegalNesting(AnnotationError):
    pass


class MalformedOntologyToken(AnnotationError):
    pass


class EmptyInput(ValueError):
    pass


class SymbolKind(enum.Enum):
    INTENT = "IN"
    SLOT = "SL"


_LABEL_RE = re.compile(r"[A-Z0-9_]+\Z")
_OPEN_RE = re.compile(r"\[(IN|SL):([A-Z0-9_]+)\Z")

#: Characters stripped from text words during normalization.
PUNCTUATION = ".,!?;:'\""
_PUNCT_TABLE = str.maketrans("", "", PUNCTUATION)

CLOSE_TOKEN = "]"


@dataclass(frozen=True)
class OntologySymbol:
    """An intent or slot label, e.g. ``PLAY_MUSIC``."""

    kind: SymbolKind
    label: str

    def __post_init__(self):
        if not _LABEL_RE.match(self.label):
            raise MalformedOntologyToken(
                f"ontology label must match [A-Z0-9_]+, got {self.label!r}"
            )

    @property
    def open_token(self) -> str:
        return f"[{self.kind.value}:{self.label}"


Child = Union["ParseNode", str]


@dataclass(frozen=True)
class ParseNode:
    """A parse-tree node: an ontology symbol over an ordered child list.

    Children are either nested ``ParseNode`` instances or single text words.
    Node children must alternate kinds: slots under intents, intents under
    slots.
    """

    symbol: OntologySymbol
    children: tuple[Child, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for child in self.children:
            if isinstance(child, ParseNode):
                if child.symbol.kind == self.symbol.kind:
                    raise IllegalNesting(
                        f"{child.symbol.kind.name.lower()} directly under "
                        f"{self.symbol.kind.name.lower()}: "
                        f"{child.symbol.label} in {self.symbol.label}"
                    )
            else:
                if not child or any(c.isspace() or c in "[]" for c in child):
                    raise AnnotationError(f"bad text token {child!r}")

    def depth(self) -> int:
        nested = [c.depth() for c in self.children if isinstance(c, ParseNode)]
        return 1 + max(nested, default=0)


def intent(label: str, *children: Child) -> ParseNode:
    return ParseNode(OntologySymbol(SymbolKind.INTENT, label), tuple(children))


def slot(label: str, *children: Child) -> ParseNode:
    return ParseNode(OntologySymbol(SymbolKind.SLOT, label), tuple(children))


def lex(s: str) -> list[str]:
    """Split an annotation string into surface tokens.

    ``]`` is always its own token even when glued to a neighbor, and a
    ``[``-initiated token runs to the next whitespace or bracket. No
    validation happens here; malformed bracket tokens pass through.
    """
    tokens = []
    i, n = 0, len(s)
    while i < n:
        c = s[i]
        if c.isspace():
            i += 1
        elif c == "]":
            tokens.append(CLOSE_TOKEN)
            i += 1
        elif c == "[":
            j = i + 1
            while j < n and not s[j].isspace() and s[j] not in "[]":
                j += 1
            tokens.append(s[i:j])
            i = j
        else:
            j = i
            while j < n and not s[j].isspace() and s[j] not in "[]":
                j += 1
            tokens.append(s[i:j])
            i = j
    return tokens


def is_open_token(token: str) -> bool:
    return _OPEN_RE.match(token) is not None


def parse_open_token(token: str) -> OntologySymbol:
    m = _OPEN_RE.match(token)
    if m is None:
        raise MalformedOntologyToken(f"bad ontology token {token!r}")
    kind = SymbolKind.INTENT if m.group(1) == "IN" else SymbolKind.SLOT
    return OntologySymbol(kind, m.group(2))


def parse_annotation(s: str) -> ParseNode:
    """Parse an annotation string into its unique tree.

    Raises :class:`UnbalancedBrackets`, :class:`RootNotIntent`,
    :class:`IllegalNesting`, or :class:`MalformedOntologyToken` on invalid
    input.
    """
    tokens = lex(s)
    if not tokens:
        raise UnbalancedBrackets("empty annotation")
    pos = 0

    def parse_node(symbol: OntologySymbol) -> ParseNode:
        nonlocal pos
        children: list[Child] = []
        while True:
            if pos >= len(tokens):
                raise UnbalancedBrackets(
                    f"unclosed {symbol.open_token}: ran out of tokens"
                )
            tok = tokens[pos]
            pos += 1
            if tok == CLOSE_TOKEN:
                return ParseNode(symbol, tuple(children))
            if tok.startswith("["):
                child_sym = parse_open_token(tok)
                if child_sym.kind == symbol.kind:
                    raise IllegalNesting(
                        f"{tok} directly under {symbol.open_token}"
                    )
                children.append(parse_node(child_sym))
            else:
                children.append(tok)

    first = tokens[pos]
    pos += 1
    if first == CLOSE_TOKEN:
        raise UnbalancedBrackets("annotation starts with ]")
    if not first.startswith("["):
        raise RootNotIntent(f"annotation starts with text {first!r}")
    root_sym = parse_open_token(first)
    if root_sym.kind is not SymbolKind.INTENT:
        raise RootNotIntent(f"root is {first}, expected an [IN: token")
    root = parse_node(root_sym)
    if pos != len(tokens):
        raise UnbalancedBrackets(
            f"trailing tokens after root closes: {' '.join(tokens[pos:])!r}"
        )
    return root


def serialize(t: ParseNode) -> str:
    """Linearize a tree to its single-space-separated annotation string."""
    out: list[str] = []

    def emit(node: ParseNode):
        out.append(node.symbol.open_token)
        for child in node.children:
            if isinstance(child, ParseNode):
                emit(child)
            else:
                out.append(child)
        out.append(CLOSE_TOKEN)

    emit(t)
    return " ".join(out)


def normalize(s: str) -> str:
    """Canonicalize a string for exact-match comparison.

    Text words are lowercased and stripped of ``.,!?;:'"``; bracket tokens
    pass through untouched; tokens are re-joined with single spaces, so
    spacing around brackets never affects a comparison. Words that strip to
    nothing are dropped. Works on malformed input (no parsing involved).
    """
    out = []
    for tok in lex(s):
        if tok == CLOSE_TOKEN or tok.startswith("["):
            out.append(tok)
        else:
            word = tok.lower().translate(_PUNCT_TABLE)
            if word:
                out.append(word)
    return " ".join(out)


def exact_match(hyp: str, ref: str) -> bool:
    """True iff the two annotations agree after normalization.

    Malformed hypotheses are legal inputs; they only match a reference that
    normalizes to the identical string.
    """
    return normalize(hyp) == normalize(ref)


def em_score(pairs: Iterable[tuple[str, str]]) -> float:
    """Mean exact match over (hypothesis, reference) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("em_score needs at least one pair")
    return sum(exact_match(h, r) for h, r in pairs) / len(pairs)


def read_anno_file(path) -> list[str]:
    """Read one annotation per line (UTF-8)."""
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]


def write_anno_file(path, annotations: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for a in annotations:
            f.write(a + "\n")
